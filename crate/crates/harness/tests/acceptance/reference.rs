//! Brute-force metric references over a 2-D grid.

pub type Grid = Vec<Vec<f64>>;

fn avg(cells: &[f64]) -> f64 {
    cells.iter().sum::<f64>() / cells.len() as f64
}

pub fn mae(p: &Grid, g: &Grid) -> f64 {
    let mut d = vec![];
    for (rp, rg) in p.iter().zip(g) {
        for (a, b) in rp.iter().zip(rg) {
            d.push((a - b).abs());
        }
    }
    avg(&d)
}

fn binarize(p: &Grid) -> Vec<Vec<bool>> {
    let flat: Vec<f64> = p.iter().flatten().copied().collect();
    let t = f64::min(2.0 * avg(&flat), 1.0);
    p.iter()
        .map(|r| r.iter().map(|&v| if t == 0.0 { v > 0.0 } else { v >= t }).collect())
        .collect()
}

pub fn fm(p: &Grid, g: &Grid) -> f64 {
    let b = binarize(p);
    let (mut tp, mut fp, mut fnn) = (0.0, 0.0, 0.0);
    for i in 0..g.len() {
        for j in 0..g[0].len() {
            match (b[i][j], g[i][j] > 0.5) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fnn += 1.0,
                _ => {}
            }
        }
    }
    let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let rec = tp / (tp + fnn);
    if prec == 0.0 && rec == 0.0 {
        0.0
    } else {
        1.3 * prec * rec / (0.3 * prec + rec)
    }
}

pub fn em(p: &Grid, g: &Grid) -> f64 {
    let b = binarize(p);
    let (h, w) = (g.len(), g[0].len());
    let n = (h * w) as f64;
    let fg: f64 = g.iter().flatten().sum();
    if fg == 0.0 {
        return (0..h).flat_map(|i| (0..w).map(move |j| (i, j))).filter(|&(i, j)| !b[i][j]).count() as f64 / n;
    }
    if fg == n {
        return (0..h).flat_map(|i| (0..w).map(move |j| (i, j))).filter(|&(i, j)| b[i][j]).count() as f64 / n;
    }
    let bm = b.iter().flatten().filter(|&&v| v).count() as f64 / n;
    let gm = fg / n;
    let mut total = 0.0;
    for i in 0..h {
        for j in 0..w {
            let a = b[i][j] as u8 as f64 - bm;
            let c = g[i][j] - gm;
            let align = 2.0 * a * c / (a * a + c * c + f64::EPSILON);
            total += (align + 1.0) * (align + 1.0) / 4.0;
        }
    }
    total / n
}

fn std1(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = avg(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

fn obj_sim(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let x = avg(v);
    2.0 * x / (x * x + 1.0 + std1(v) + f64::EPSILON)
}

fn ssim(p: &[f64], g: &[f64]) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    let (x, y) = (avg(p), avg(g));
    let d = if p.len() > 1 { p.len() as f64 - 1.0 } else { 1.0 };
    let sx = p.iter().map(|v| (v - x).powi(2)).sum::<f64>() / d;
    let sy = g.iter().map(|v| (v - y).powi(2)).sum::<f64>() / d;
    let sxy = p.iter().zip(g).map(|(a, b)| (a - x) * (b - y)).sum::<f64>() / d;
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + f64::EPSILON)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn sm(p: &Grid, g: &Grid) -> f64 {
    let (h, w) = (g.len(), g[0].len());
    let cells: Vec<(usize, usize)> = (0..h).flat_map(|i| (0..w).map(move |j| (i, j))).collect();
    let u = cells.iter().filter(|&&(i, j)| g[i][j] > 0.5).count() as f64 / (h * w) as f64;
    let pm = avg(&p.iter().flatten().copied().collect::<Vec<_>>());
    if u == 0.0 {
        return (1.0 - pm).max(0.0);
    }
    if u == 1.0 {
        return pm.max(0.0);
    }
    let fg: Vec<f64> = cells.iter().filter(|&&(i, j)| g[i][j] > 0.5).map(|&(i, j)| p[i][j]).collect();
    let bg: Vec<f64> = cells.iter().filter(|&&(i, j)| g[i][j] < 0.5).map(|&(i, j)| 1.0 - p[i][j]).collect();
    let so = u * obj_sim(&fg) + (1.0 - u) * obj_sim(&bg);

    let on: Vec<&(usize, usize)> = cells.iter().filter(|&&(i, j)| g[i][j] > 0.5).collect();
    let ci = (on.iter().map(|c| c.0 as f64).sum::<f64>() / on.len() as f64).round_ties_even() as usize + 1;
    let cj = (on.iter().map(|c| c.1 as f64).sum::<f64>() / on.len() as f64).round_ties_even() as usize + 1;
    let (ci, cj) = (ci.min(h), cj.min(w));
    let mut sr = 0.0;
    for (top, left) in [(true, true), (true, false), (false, true), (false, false)] {
        let inside: Vec<&(usize, usize)> = cells
            .iter()
            .filter(|&&(i, j)| (i < ci) == top && (j < cj) == left)
            .collect();
        let pp: Vec<f64> = inside.iter().map(|&&(i, j)| p[i][j]).collect();
        let gg: Vec<f64> = inside.iter().map(|&&(i, j)| g[i][j]).collect();
        sr += inside.len() as f64 / (h * w) as f64 * ssim(&pp, &gg);
    }
    (0.5 * so + 0.5 * sr).max(0.0)
}
