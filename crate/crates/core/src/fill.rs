//! Nearest-known-neighbour filling on N-dimensional grids.

use std::collections::VecDeque;

/// Replace every unknown entry with the value of the closest known entry in
/// city-block distance (multi-source BFS, ties broken by visiting order).
/// Returns false when nothing is known, leaving `data` untouched.
pub fn fill_nearest(data: &mut [f64], known: &[bool], dims: &[usize]) -> bool {
    let n: usize = dims.iter().product();
    assert_eq!(data.len(), n);
    assert_eq!(known.len(), n);
    let mut strides = Vec::with_capacity(dims.len());
    let mut s = 1;
    for &d in dims {
        strides.push(s);
        s *= d;
    }
    let mut seen = known.to_vec();
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| known[i]).collect();
    if queue.is_empty() {
        return false;
    }
    while let Some(i) = queue.pop_front() {
        for (&d, &st) in dims.iter().zip(&strides) {
            let coord = (i / st) % d;
            if coord > 0 {
                let j = i - st;
                if !seen[j] {
                    seen[j] = true;
                    data[j] = data[i];
                    queue.push_back(j);
                }
            }
            if coord + 1 < d {
                let j = i + st;
                if !seen[j] {
                    seen[j] = true;
                    data[j] = data[i];
                    queue.push_back(j);
                }
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fills_from_nearest() {
        let mut d = vec![0.0, 5.0, 0.0, 0.0, 0.0, 9.0];
        let k = vec![false, true, false, false, false, true];
        assert!(fill_nearest(&mut d, &k, &[6]));
        assert_eq!(d, vec![5.0, 5.0, 5.0, 5.0, 9.0, 9.0]);
    }

    #[test]
    fn nothing_known() {
        let mut d = vec![1.0; 4];
        assert!(!fill_nearest(&mut d, &[false; 4], &[2, 2]));
        assert_eq!(d, vec![1.0; 4]);
    }

    #[test]
    fn two_dimensional() {
        let mut d = vec![0.0; 9];
        let mut k = vec![false; 9];
        d[4] = 3.0;
        k[4] = true;
        fill_nearest(&mut d, &k, &[3, 3]);
        assert!(d.iter().all(|&v| v == 3.0));
    }
}
