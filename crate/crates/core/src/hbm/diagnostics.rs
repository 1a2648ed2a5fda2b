//! Split-R̂ and effective sample size over multiple chains.

/// Splits each chain in half. Chains shorter than 4 draws are ignored.
fn split(chains: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for c in chains {
        let h = c.len() / 2;
        if h < 2 {
            continue;
        }
        out.push(c[..h].to_vec());
        out.push(c[c.len() - h..].to_vec());
    }
    out
}

fn moments(chains: &[Vec<f64>]) -> Option<(f64, f64, Vec<f64>)> {
    let m = chains.len();
    if m < 2 {
        return None;
    }
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m as f64;
    let b = n / (m as f64 - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m as f64;
    let var_plus = (n - 1.0) / n * w + b / n;
    Some((w, var_plus, means))
}

/// Potential scale reduction on split chains. 1.0 for a constant parameter,
/// ∞ when chains are individually constant but disagree.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    let s = split(chains);
    let Some((w, var_plus, _)) = moments(&s) else { return f64::NAN };
    if w <= 0.0 {
        return if var_plus <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    (var_plus / w).sqrt()
}

fn autocov(c: &[f64], mean: f64, lag: usize) -> f64 {
    let n = c.len();
    (0..n - lag).map(|i| (c[i] - mean) * (c[i + lag] - mean)).sum::<f64>() / n as f64
}

/// Effective sample size on split chains with Geyer's initial monotone
/// sequence truncation.
pub fn ess(chains: &[&[f64]]) -> f64 {
    let s = split(chains);
    let Some((w, var_plus, means)) = moments(&s) else { return f64::NAN };
    let m = s.len();
    let n = s[0].len();
    let total = (m * n) as f64;
    if var_plus <= 0.0 || w <= 0.0 {
        return total;
    }
    let rho = |t: usize| -> f64 {
        let acov = s.iter().zip(&means).map(|(c, mu)| autocov(c, *mu, t)).sum::<f64>() / m as f64;
        1.0 - (w - acov) / var_plus
    };
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let mut pair = rho(t) + rho(t + 1);
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev);
        sum += pair;
        prev = pair;
        t += 2;
    }
    let tau = (-1.0 + 2.0 * sum).max(1.0 / total.log10().max(1.0));
    total / tau
}
