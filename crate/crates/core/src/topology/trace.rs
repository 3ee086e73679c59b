use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use super::{ContactSchedule, NodeId, TopologyError};

/// One position sample, in seconds and meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub time_s: f64,
    pub node: NodeId,
    pub x_m: f64,
    pub y_m: f64,
}

/// Reads a `time_s,node_id,x_m,y_m` CSV (header required).
///
/// Timestamps must be strictly increasing per node.
pub fn read_trace(input: impl Read) -> Result<Vec<TraceRecord>, TopologyError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let header = reader.headers().map_err(|e| TopologyError::Malformed { line: 1, message: e.to_string() })?.clone();
    let expected = ["time_s", "node_id", "x_m", "y_m"];
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(TopologyError::Malformed { line: 1, message: format!("header must be {}", expected.join(",")) });
    }
    let mut last: BTreeMap<NodeId, f64> = BTreeMap::new();
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| TopologyError::Malformed { line, message: e.to_string() })?;
        let num = |c: usize| -> Result<f64, TopologyError> {
            rec.get(c)
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| TopologyError::Malformed { line, message: format!("bad value in column {}", c + 1) })
        };
        let node = rec
            .get(1)
            .and_then(|v| v.parse::<u64>().ok())
            .map(NodeId)
            .ok_or_else(|| TopologyError::Malformed { line, message: "bad node_id".into() })?;
        let r = TraceRecord { time_s: num(0)?, node, x_m: num(2)?, y_m: num(3)? };
        if let Some(&prev) = last.get(&node) {
            if r.time_s <= prev {
                return Err(TopologyError::NonMonotone { node, line });
            }
        }
        last.insert(node, r.time_s);
        out.push(r);
    }
    Ok(out)
}

/// Contact schedule from position records.
///
/// Slot `k` covers `[k L, (k + 1) L)`. A node is present in slot `k` when its
/// records span the whole slot; its position is linearly interpolated at the
/// slot start, and present nodes within `contact_radius` meters are neighbors.
pub fn schedule_from_records(
    records: &[TraceRecord],
    contact_radius: f64,
    slot_length: f64,
) -> Result<ContactSchedule, TopologyError> {
    if slot_length.is_nan() || slot_length <= 0.0 || contact_radius.is_nan() || contact_radius < 0.0 {
        return Err(TopologyError::Config("slot length must be positive and radius nonnegative".into()));
    }
    let mut by_node: BTreeMap<NodeId, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for r in records {
        by_node.entry(r.node).or_default().push((r.time_s, r.x_m, r.y_m));
    }
    for track in by_node.values_mut() {
        track.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let end = by_node.values().filter_map(|t| t.last()).map(|p| p.0).fold(0.0, f64::max);
    let slots = (end / slot_length + 1e-9).floor() as usize;

    let mut presence = Vec::with_capacity(slots);
    let mut edges = Vec::with_capacity(slots);
    for k in 0..slots {
        let (start, stop) = (k as f64 * slot_length, (k + 1) as f64 * slot_length);
        let here: Vec<(NodeId, (f64, f64))> = by_node
            .iter()
            .filter(|(_, tr)| tr[0].0 <= start && tr[tr.len() - 1].0 >= stop)
            .map(|(&v, tr)| (v, interpolate(tr, start)))
            .collect();
        let mut slot_edges = Vec::new();
        for i in 0..here.len() {
            for j in i + 1..here.len() {
                let (a, b) = (here[i].1, here[j].1);
                if (a.0 - b.0).hypot(a.1 - b.1) <= contact_radius {
                    slot_edges.push((here[i].0, here[j].0));
                }
            }
        }
        presence.push(here.into_iter().map(|(v, _)| v).collect());
        edges.push(slot_edges);
    }
    ContactSchedule::from_slots(presence, edges)
}

fn interpolate(track: &[(f64, f64, f64)], t: f64) -> (f64, f64) {
    let i = track.partition_point(|p| p.0 <= t);
    if i == 0 {
        return (track[0].1, track[0].2);
    }
    if i == track.len() {
        let p = track[i - 1];
        return (p.1, p.2);
    }
    let (a, b) = (track[i - 1], track[i]);
    let w = (t - a.0) / (b.0 - a.0);
    (a.1 + w * (b.1 - a.1), a.2 + w * (b.2 - a.2))
}

/// Reads a trace file and converts it to a schedule.
pub fn trace_schedule(
    trace_file: &Path,
    contact_radius: f64,
    slot_length: f64,
) -> Result<ContactSchedule, TopologyError> {
    let file = std::fs::File::open(trace_file)?;
    schedule_from_records(&read_trace(file)?, contact_radius, slot_length)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_static(distance: f64) -> String {
        let mut s = String::from("time_s,node_id,x_m,y_m\n");
        for t in [0, 30, 60, 90, 120] {
            s += &format!("{t},1,0,0\n{t},2,{distance},0\n");
        }
        s
    }

    fn schedule(text: &str, radius: f64) -> ContactSchedule {
        schedule_from_records(&read_trace(text.as_bytes()).unwrap(), radius, 20.0).unwrap()
    }

    #[test]
    fn static_pair_within_radius_is_always_linked() {
        let s = schedule(&two_static(100.0), 150.0);
        assert_eq!(s.slot_count(), 6);
        for t in 0..6 {
            assert_eq!(s.neighbors(NodeId(1), t), &[NodeId(2)]);
        }
        let far = schedule(&two_static(100.0), 90.0);
        assert!((0..6).all(|t| far.degree(NodeId(1), t) == 0));
    }

    #[test]
    fn presence_requires_full_slot_coverage() {
        let mut text = two_static(10.0);
        text += "0,3,5,5\n30,3,5,5\n60,3,5,5\n";
        let s = schedule(&text, 150.0);
        let slots: Vec<usize> = (0..s.slot_count()).filter(|&t| s.is_present(NodeId(3), t)).collect();
        assert_eq!(slots, vec![0, 1, 2]);
    }

    #[test]
    fn moving_node_is_interpolated() {
        let text = "time_s,node_id,x_m,y_m\n0,1,0,0\n40,1,0,0\n0,2,400,0\n40,2,0,0\n";
        let s = schedule(text, 250.0);
        // node 2 is at 400 m at t=0 and at 200 m at t=20
        assert_eq!(s.degree(NodeId(1), 0), 0);
        assert_eq!(s.degree(NodeId(1), 1), 1);
    }

    #[test]
    fn malformed_and_non_monotone_rows_are_rejected() {
        let bad = "time_s,node_id,x_m,y_m\n0,1,0,zero\n";
        assert!(matches!(read_trace(bad.as_bytes()), Err(TopologyError::Malformed { line: 2, .. })));
        let back = "time_s,node_id,x_m,y_m\n10,1,0,0\n5,1,0,0\n";
        assert!(matches!(read_trace(back.as_bytes()), Err(TopologyError::NonMonotone { line: 3, .. })));
        let header = "t,node,x,y\n0,1,0,0\n";
        assert!(read_trace(header.as_bytes()).is_err());
    }
}
