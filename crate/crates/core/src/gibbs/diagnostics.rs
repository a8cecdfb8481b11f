//! Chain diagnostics and posterior summaries.

/// Effective sample size of a single chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ess {
    pub value: f64,
    /// The chain was constant; `value` is then its length by convention.
    pub constant: bool,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Initial positive sequence estimator: autocorrelations are summed in
/// adjacent pairs until the first non-positive pair sum, with each pair sum
/// capped at the previous one (the monotone refinement). The result is
/// clamped to `(0, len]`.
///
/// Panics if `draws` has fewer than 2 entries; callers reporting ESS require
/// at least 10.
pub fn effective_sample_size(draws: &[f64]) -> Ess {
    let n = draws.len();
    assert!(n >= 2, "effective sample size needs at least two draws");
    let m = mean(draws);
    let centered: Vec<f64> = draws.iter().map(|v| v - m).collect();
    let autocov = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let gamma0 = autocov(0);
    if !(gamma0 > 0.0) {
        return Ess {
            value: n as f64,
            constant: true,
        };
    }
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while k + 1 < n {
        let pair = (autocov(k) + autocov(k + 1)) / gamma0;
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        k += 2;
    }
    let value = if tau > 0.0 { n as f64 / tau } else { n as f64 };
    Ess {
        value: value.min(n as f64),
        constant: false,
    }
}

/// Split-chain potential scale reduction. Each chain is cut in half and the
/// halves are treated as separate chains. Returns `None` for fewer than two
/// chains, fewer than four draws per chain, or zero within-chain variance.
pub fn split_rhat(chains: &[&[f64]]) -> Option<f64> {
    if chains.len() < 2 {
        return None;
    }
    let n = chains.iter().map(|c| c.len()).min()?;
    if n < 4 {
        return None;
    }
    let half = n / 2;
    let pieces: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..half], &c[n - half..n]])
        .collect();
    let means: Vec<f64> = pieces.iter().map(|p| mean(p)).collect();
    let grand = mean(&means);
    let m = pieces.len() as f64;
    let len = half as f64;
    let between = len / (m - 1.0) * means.iter().map(|v| (v - grand).powi(2)).sum::<f64>();
    let within = pieces
        .iter()
        .zip(&means)
        .map(|(p, mu)| p.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (len - 1.0))
        .sum::<f64>()
        / m;
    if !(within > 0.0) {
        return None;
    }
    let pooled = (len - 1.0) / len * within + between / len;
    Some((pooled / within).sqrt())
}

/// Linear-interpolation quantile of sorted data (the common "type 7" rule).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    /// Sum of per-chain effective sample sizes.
    pub ess: f64,
    pub rhat: Option<f64>,
    /// Monte Carlo standard error of the mean, `sd / sqrt(ess)`.
    pub mcse: f64,
    /// Some chain was constant, so its ESS is a convention rather than an estimate.
    pub constant_chain: bool,
}

impl ParamSummary {
    pub fn covers(&self, value: f64) -> bool {
        self.q025 <= value && value <= self.q975
    }
}

/// Summarizes one parameter from its per-chain draws.
pub fn summarize(name: &str, chains: &[&[f64]]) -> ParamSummary {
    let mut all: Vec<f64> = chains.iter().flat_map(|c| c.iter().copied()).collect();
    let total = all.len();
    let mu = mean(&all);
    let sd = if total > 1 {
        (all.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (total - 1) as f64).sqrt()
    } else {
        0.0
    };
    all.sort_by(|a, b| a.total_cmp(b));
    let mut ess = 0.0;
    let mut constant = false;
    for c in chains {
        if c.len() >= 2 {
            let e = effective_sample_size(c);
            ess += e.value;
            constant |= e.constant;
        } else {
            ess += c.len() as f64;
        }
    }
    let ess = ess.min(total as f64);
    ParamSummary {
        name: name.to_string(),
        mean: mu,
        sd,
        q025: quantile_sorted(&all, 0.025),
        q50: quantile_sorted(&all, 0.5),
        q975: quantile_sorted(&all, 0.975),
        ess,
        rhat: split_rhat(chains),
        mcse: if ess > 0.0 { sd / ess.sqrt() } else { f64::NAN },
        constant_chain: constant,
    }
}
