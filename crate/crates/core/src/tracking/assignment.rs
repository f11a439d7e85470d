//! Exact minimum-cost assignment with lexicographic tie-breaking.
//!
//! Costs are integers, so optimality and ties are decided exactly. Each real
//! row may be matched to an allowed column or left unmatched. The solution
//! maximizes the number of matched pairs first and minimizes total cost
//! second. Among all optimal solutions, rows in ascending order take the
//! smallest feasible column, and being matched beats being unmatched.

/// Solves the assignment problem for `rows × cols` with `cost(i, j)`
/// returning `None` for forbidden pairs. Returns the column matched to each
/// row (or `None`).
pub fn solve(rows: usize, cols: usize, cost: impl Fn(usize, usize) -> Option<i64>) -> Vec<Option<usize>> {
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    let n = rows.max(cols);
    let mut allowed = vec![vec![None; n]; n];
    let mut big: i64 = 1;
    for (i, row) in allowed.iter_mut().enumerate().take(rows) {
        let mut row_max = 0;
        for (j, cell) in row.iter_mut().enumerate().take(cols) {
            if let Some(c) = cost(i, j) {
                debug_assert!(c >= 0);
                *cell = Some(c);
                row_max = row_max.max(c);
            }
        }
        big += row_max;
    }
    let matrix: Vec<Vec<i64>> = allowed.iter().map(|r| r.iter().map(|c| c.unwrap_or(big)).collect()).collect();
    let (mut row_to_col, u, v) = hungarian(&matrix);
    let tight = |i: usize, j: usize| matrix[i][j] - u[i] - v[j] == 0;

    let mut col_to_row = vec![0; n];
    for (i, &j) in row_to_col.iter().enumerate() {
        col_to_row[j] = i;
    }
    let mut fixed_row = vec![false; n];
    let mut fixed_col = vec![false; n];
    for i in 0..rows {
        // preference: allowed real columns ascending, then any unmatched option
        for j in 0..cols {
            if allowed[i][j].is_none() || fixed_col[j] || !tight(i, j) {
                continue;
            }
            if row_to_col[i] == j
                || reroute(i, j, &tight, &mut row_to_col, &mut col_to_row, &fixed_row, &fixed_col)
            {
                break;
            }
        }
        // An unmatched row stays movable among forbidden/dummy columns; it can
        // never regain an allowed column because later rows only add constraints.
        let j = row_to_col[i];
        if j < cols && allowed[i][j].is_some() {
            fixed_row[i] = true;
            fixed_col[j] = true;
        }
    }
    (0..rows)
        .map(|i| {
            let j = row_to_col[i];
            (j < cols && allowed[i][j].is_some()).then_some(j)
        })
        .collect()
}

/// Tries to change the perfect matching so that row `i` takes column `j`,
/// keeping all fixed pairs and using only tight edges.
fn reroute(
    i: usize,
    j: usize,
    tight: &impl Fn(usize, usize) -> bool,
    row_to_col: &mut [usize],
    col_to_row: &mut [usize],
    fixed_row: &[bool],
    fixed_col: &[bool],
) -> bool {
    let n = row_to_col.len();
    let free_row = col_to_row[j];
    let target_col = row_to_col[i];
    if fixed_row[free_row] {
        return false;
    }
    // BFS over rows: from free_row find an alternating path ending at target_col.
    let mut prev_col: Vec<Option<usize>> = vec![None; n]; // row reached via which column
    let mut seen_col = vec![false; n];
    let mut seen_row = vec![false; n];
    seen_row[free_row] = true;
    let mut queue = std::collections::VecDeque::from([free_row]);
    let mut parent_row = vec![usize::MAX; n]; // column -> row that reached it
    let mut found = false;
    while let Some(r) = queue.pop_front() {
        for c in 0..n {
            if seen_col[c] || fixed_col[c] || c == j || !tight(r, c) {
                continue;
            }
            seen_col[c] = true;
            parent_row[c] = r;
            if c == target_col {
                found = true;
                break;
            }
            let next = col_to_row[c];
            if next == i || fixed_row[next] || seen_row[next] {
                continue;
            }
            seen_row[next] = true;
            prev_col[next] = Some(c);
            queue.push_back(next);
        }
        if found {
            break;
        }
    }
    if !found {
        return false;
    }
    // flip: walk back from target_col
    let mut c = target_col;
    loop {
        let r = parent_row[c];
        let previous = prev_col[r];
        row_to_col[r] = c;
        col_to_row[c] = r;
        match previous {
            Some(pc) => c = pc,
            None => break,
        }
    }
    row_to_col[i] = j;
    col_to_row[j] = i;
    true
}

/// O(n³) Hungarian method on a square integer matrix.
///
/// Returns the column of each row and dual potentials `u`, `v` with
/// `cost[i][j] - u[i] - v[j] >= 0` everywhere and `== 0` on the matching.
fn hungarian(cost: &[Vec<i64>]) -> (Vec<usize>, Vec<i64>, Vec<i64>) {
    let n = cost.len();
    const INF: i64 = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
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
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    (row_to_col, u[1..].to_vec(), v[1..].to_vec())
}
