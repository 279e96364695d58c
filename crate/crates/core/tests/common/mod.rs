//! Brute-force recount implementations of the match metrics, shared by
//! the metric tests and the acceptance suite.

#![allow(dead_code)]

/// Occurrences of `g` in `seq`, by scanning every position.
pub fn occurrences(seq: &[String], g: &[String]) -> usize {
    if g.len() > seq.len() {
        return 0;
    }
    (0..=seq.len() - g.len()).filter(|&i| seq[i..i + g.len()] == *g).count()
}

/// Distinct n-grams of `seq` in first-seen order.
pub fn distinct(seq: &[String], n: usize) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    if n == 0 || seq.len() < n {
        return out;
    }
    for i in 0..=seq.len() - n {
        let g = seq[i..i + n].to_vec();
        if !out.contains(&g) {
            out.push(g);
        }
    }
    out
}

pub fn oracle_bleu(
    r: &[String],
    h: &[String],
    max_n: usize,
    eps: Option<f64>,
    weight: &dyn Fn(&[String]) -> f64,
    skip: &dyn Fn(&[String]) -> bool,
) -> f64 {
    if r.is_empty() || h.is_empty() {
        return 0.0;
    }
    let mut logs = Vec::new();
    for n in 1..=max_n {
        let mut m = 0.0;
        let mut c = 0.0;
        for g in distinct(h, n).iter().filter(|g| !skip(g)) {
            let ch = occurrences(h, g);
            c += weight(g) * ch as f64;
            m += weight(g) * ch.min(occurrences(r, g)) as f64;
        }
        let rc: f64 = distinct(r, n)
            .iter()
            .filter(|g| !skip(g))
            .map(|g| weight(g) * occurrences(r, g) as f64)
            .sum();
        if c == 0.0 && rc == 0.0 {
            continue;
        }
        if m == 0.0 && (n == 1 || eps.is_none()) {
            return 0.0;
        }
        let p = if m > 0.0 { m / c } else { eps.unwrap() / c.max(1.0) };
        logs.push(p.ln());
    }
    let bp = if h.len() > r.len() {
        1.0
    } else {
        (1.0 - r.len() as f64 / h.len() as f64).exp()
    };
    if logs.is_empty() {
        return bp;
    }
    bp * (logs.iter().sum::<f64>() / logs.len() as f64).exp()
}

pub fn oracle_lcs(a: &[String], b: &[String]) -> usize {
    // full table, filled row by row
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t[a.len()][b.len()]
}

pub fn oracle_rouge(r: &[String], h: &[String]) -> f64 {
    let l = oracle_lcs(r, h) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let (p, rec, b2) = (l / h.len() as f64, l / r.len() as f64, 1.2f64 * 1.2);
    (1.0 + b2) * p * rec / (rec + b2 * p)
}

pub fn oracle_edit(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in t.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        t[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = t[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            t[i][j] = sub.min(t[i - 1][j] + 1).min(t[i][j - 1] + 1);
        }
    }
    let longest = a.len().max(b.len());
    if longest == 0 {
        1.0
    } else {
        1.0 - t[a.len()][b.len()] as f64 / longest as f64
    }
}

pub fn oracle_chrf(r: &str, h: &str) -> f64 {
    let squash = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
    let r: Vec<String> = squash(r).chars().map(String::from).collect();
    let h: Vec<String> = squash(h).chars().map(String::from).collect();
    if h.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    let mut orders = 0;
    for n in 1..=6 {
        let hc = h.len().saturating_sub(n - 1) * usize::from(h.len() >= n);
        let rc = r.len().saturating_sub(n - 1) * usize::from(r.len() >= n);
        if hc == 0 && rc == 0 {
            continue;
        }
        orders += 1;
        let m: usize = distinct(&h, n)
            .iter()
            .map(|g| occurrences(&h, g).min(occurrences(&r, g)))
            .sum();
        if m == 0 {
            continue;
        }
        let (p, rec) = (m as f64 / hc as f64, m as f64 / rc as f64);
        total += 5.0 * p * rec / (4.0 * p + rec);
    }
    if orders == 0 {
        0.0
    } else {
        total / orders as f64
    }
}
