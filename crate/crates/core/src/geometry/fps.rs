use crate::error::{DmdError, Result};

/// Greedy max-min selection. Starts at `start`; every later pick maximizes
/// the distance to its nearest already-picked point (lowest index on ties).
/// Returns `min(k, n)` indices in pick order.
pub fn farthest_point_sampling(points: &[[f64; 2]], k: usize, start: usize) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(DmdError::Empty("farthest point sampling input"));
    }
    if k == 0 {
        return Err(DmdError::InvalidArgument("k must be at least 1".into()));
    }
    if start >= points.len() {
        return Err(DmdError::InvalidArgument(format!(
            "start index {start} out of range for {} points",
            points.len()
        )));
    }
    let n = points.len();
    let take = k.min(n);
    let d2 = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);

    let mut picked = Vec::with_capacity(take);
    let mut selected = vec![false; n];
    let mut nearest: Vec<f64> = points.iter().map(|&p| d2(p, points[start])).collect();
    picked.push(start);
    selected[start] = true;

    while picked.len() < take {
        let mut best = None;
        for i in 0..n {
            if selected[i] {
                continue;
            }
            match best {
                Some((_, d)) if nearest[i] <= d => {}
                _ => best = Some((i, nearest[i])),
            }
        }
        let (next, _) = best.expect("unselected points remain");
        picked.push(next);
        selected[next] = true;
        for i in 0..n {
            nearest[i] = nearest[i].min(d2(points[i], points[next]));
        }
    }
    Ok(picked)
}
