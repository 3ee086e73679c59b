use std::collections::BTreeSet;
use std::io::{Read, Write};

use super::{ContactSchedule, NodeId, TopologyError};

/// Writes every undirected edge as a `slot,node_a,node_b` row with `a < b`.
pub fn write_contact_list(schedule: &ContactSchedule, out: impl Write) -> Result<(), TopologyError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["slot", "node_a", "node_b"]).map_err(csv_err)?;
    for t in 0..schedule.slot_count() {
        for (a, b) in schedule.edges(t) {
            w.write_record([t.to_string(), a.to_string(), b.to_string()]).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a contact list written by [`write_contact_list`].
///
/// Every node named in the file is present in every slot. The slot count is
/// `slots` when given, otherwise one past the largest slot index.
pub fn read_contact_list(input: impl Read, slots: Option<usize>) -> Result<ContactSchedule, TopologyError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut rows = Vec::new();
    let mut nodes = BTreeSet::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| TopologyError::Malformed { line, message: e.to_string() })?;
        let field = |c: usize| -> Result<u64, TopologyError> {
            rec.get(c)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| TopologyError::Malformed { line, message: format!("bad integer in column {}", c + 1) })
        };
        let (t, a, b) = (field(0)? as usize, NodeId(field(1)?), NodeId(field(2)?));
        nodes.insert(a);
        nodes.insert(b);
        rows.push((t, a, b));
    }
    let count = slots.unwrap_or_else(|| rows.iter().map(|r| r.0 + 1).max().unwrap_or(0));
    let mut edges = vec![Vec::new(); count];
    for (t, a, b) in rows {
        let slot = edges
            .get_mut(t)
            .ok_or_else(|| TopologyError::InvalidSlot { slot: t, message: format!("beyond {count} slots") })?;
        slot.push((a, b));
    }
    let present: Vec<NodeId> = nodes.into_iter().collect();
    ContactSchedule::from_slots(vec![present; count], edges)
}

fn csv_err(e: csv::Error) -> TopologyError {
    TopologyError::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{erdos_renyi_schedule, ErdosRenyiConfig};

    #[test]
    fn round_trip_preserves_edges() {
        let s = erdos_renyi_schedule(&ErdosRenyiConfig { node_count: 6, edge_prob: 0.5, slots: 8, seed: 3 }).unwrap();
        let mut buf = Vec::new();
        write_contact_list(&s, &mut buf).unwrap();
        let back = read_contact_list(buf.as_slice(), Some(8)).unwrap();
        for t in 0..8 {
            assert_eq!(s.edges(t), back.edges(t));
        }
    }

    #[test]
    fn reversed_rows_are_symmetrized() {
        let text = "slot,node_a,node_b\n0,4,2\n2,2,9\n";
        let s = read_contact_list(text.as_bytes(), None).unwrap();
        assert_eq!(s.slot_count(), 3);
        assert_eq!(s.neighbors(NodeId(2), 0), &[NodeId(4)]);
        assert!(s.is_present(NodeId(9), 1));
        assert!(read_contact_list(text.as_bytes(), Some(2)).is_err());
        assert!(read_contact_list("slot,node_a,node_b\n0,x,1\n".as_bytes(), None).is_err());
    }
}
