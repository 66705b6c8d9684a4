//! Maximum-weight one-to-one assignment (Hungarian method with potentials).

/// Best total weight of a one-to-one matching between rows and columns of
/// `weights`, and the column chosen for each row (`None` when the row is
/// matched to padding). The matrix is padded to square with zeros, so rows
/// and columns may be left unmatched at no cost.
pub fn max_weight_assignment(weights: &[Vec<i64>]) -> (i64, Vec<Option<usize>>) {
    let rows = weights.len();
    let cols = weights.iter().map(Vec::len).max().unwrap_or(0);
    let n = rows.max(cols);
    if n == 0 {
        return (0, Vec::new());
    }
    let w = |i: usize, j: usize| -> i64 { weights.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0) };
    let max = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| w(i, j))
        .max()
        .unwrap_or(0);
    let cost = |i: usize, j: usize| max - w(i, j);

    // 1-based arrays; p[j] is the row matched to column j, column 0 is virtual.
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut chosen = vec![None; rows];
    let mut total = 0;
    for j in 1..=n {
        let i = p[j] - 1;
        if i < rows && j - 1 < cols {
            chosen[i] = Some(j - 1);
            total += w(i, j - 1);
        }
    }
    (total, chosen)
}
