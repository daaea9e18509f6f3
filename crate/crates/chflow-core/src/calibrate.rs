//! Calibration of the CH-NTP dynamic against observed day-to-day route
//! counts: RMSE objective, grid search with day-0 state selection,
//! log-likelihoods with likelihood-ratio tests, and the previous-day
//! cost-rank net-flow diagnostic.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feasible_set::project_scaled_simplex;
use crate::framework::{ClassFlowState, ClassProfile, Dynamic, Trajectory};
use crate::network::Network;
use crate::ntp::{ntp_predictions, NtpParams};

/// Observed per-day route counts. Day 0 is the initial observation; days
/// `1..rows` are the evolution being fitted.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    counts: Vec<Vec<f64>>,
}

impl ExperimentData {
    /// Validate per-day counts against the network: nonnegative entries and
    /// per-OD sums equal to the OD demand.
    pub fn new(counts: Vec<Vec<f64>>, network: &Network) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidData("no observation rows".into()));
        }
        let r = network.num_routes();
        for (day, row) in counts.iter().enumerate() {
            if row.len() != r {
                return Err(Error::InvalidData(format!(
                    "day {day}: expected {r} route columns, got {}",
                    row.len()
                )));
            }
            if row.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(Error::InvalidData(format!("day {day}: negative count")));
            }
            for od in network.od_pairs() {
                let sum: f64 = od.route_range().map(|i| row[i]).sum();
                if (sum - od.demand).abs() > 1e-6 * (1.0 + od.demand) {
                    return Err(Error::InvalidData(format!(
                        "day {day}: counts for OD {} sum to {sum}, demand is {}",
                        od.id, od.demand
                    )));
                }
            }
        }
        Ok(ExperimentData { counts })
    }

    /// Parse the experiment CSV (header `day,route_1,...,route_R`; day column
    /// must run 0,1,2,... without gaps).
    pub fn parse_csv(text: &str, network: &Network) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidData("empty experiment file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let r = network.num_routes();
        if cols.len() != r + 1 || !cols[0].eq_ignore_ascii_case("day") {
            return Err(Error::InvalidData(format!(
                "expected header day,route_1,...,route_{r}"
            )));
        }
        let mut counts = Vec::new();
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != r + 1 {
                return Err(Error::InvalidData(format!(
                    "row {}: expected {} fields, got {}",
                    i + 1,
                    r + 1,
                    fields.len()
                )));
            }
            let day: i64 = fields[0]
                .parse()
                .map_err(|_| Error::InvalidData(format!("row {}: bad day index", i + 1)))?;
            if day != i as i64 {
                return Err(Error::InvalidData(format!(
                    "missing or out-of-order day: expected {}, got {day}",
                    i
                )));
            }
            let row = fields[1..]
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::InvalidData(format!("row {}: bad count {f}", i + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            counts.push(row);
        }
        ExperimentData::new(counts, network)
    }

    pub fn to_csv(&self) -> String {
        let r = self.counts[0].len();
        let mut out = String::from("day");
        for i in 1..=r {
            out.push_str(&format!(",route_{i}"));
        }
        out.push('\n');
        for (day, row) in self.counts.iter().enumerate() {
            out.push_str(&day.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// Number of observation rows (days 0..rows-1).
    pub fn num_rows(&self) -> usize {
        self.counts.len()
    }

    /// Largest M usable for calibration: days 1..=M are fitted.
    pub fn max_horizon(&self) -> usize {
        self.counts.len() - 1
    }

    pub fn day(&self, t: usize) -> &[f64] {
        &self.counts[t]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.counts
    }
}

fn check_horizon(data: &ExperimentData, m: usize) -> Result<()> {
    if m < 1 || m > data.max_horizon() {
        return Err(Error::InvalidData(format!(
            "calibration horizon {m} outside the data range 1..={}",
            data.max_horizon()
        )));
    }
    Ok(())
}

/// Root mean square error between predicted aggregates for days `1..=m`
/// (`predicted[t-1]` is day `t`) and the observations.
pub fn rmse(predicted: &[Vec<f64>], data: &ExperimentData, m: usize) -> Result<f64> {
    check_horizon(data, m)?;
    if predicted.len() < m {
        return Err(Error::DimensionMismatch { expected: m, got: predicted.len() });
    }
    let r = data.counts[0].len();
    let mut sq = 0.0;
    for t in 1..=m {
        let row = &data.counts[t];
        let pred = &predicted[t - 1];
        if pred.len() != r {
            return Err(Error::DimensionMismatch { expected: r, got: pred.len() });
        }
        for (a, b) in pred.iter().zip(row) {
            sq += (a - b) * (a - b);
        }
    }
    Ok((sq / (r as f64 * m as f64)).sqrt())
}

/// RMSE of a simulated trajectory whose day-0 state corresponds to the data's
/// day 0.
pub fn trajectory_rmse(traj: &Trajectory, data: &ExperimentData, m: usize) -> Result<f64> {
    let predicted: Vec<Vec<f64>> = traj.states[1..]
        .iter()
        .map(|s| s.aggregate().to_vec())
        .collect();
    rmse(&predicted, data, m)
}

/// Per-traveler route-choice probabilities implied by a trajectory:
/// `G^(t)(r) = predicted flow / OD demand`, for days `1..=m`.
pub fn trajectory_probabilities(
    network: &Network,
    traj: &Trajectory,
    m: usize,
) -> Result<Vec<Vec<f64>>> {
    if traj.horizon() < m {
        return Err(Error::DimensionMismatch { expected: m, got: traj.horizon() });
    }
    let mut probs = Vec::with_capacity(m);
    for t in 1..=m {
        let agg = traj.states[t].aggregate();
        let mut row = vec![0.0; agg.len()];
        for od in network.od_pairs() {
            for i in od.route_range() {
                row[i] = agg[i] / od.demand;
            }
        }
        probs.push(row);
    }
    Ok(probs)
}

/// Log-likelihood of the observed choices under per-day model probabilities
/// (`probs[t-1]` is day `t`). Zero model probability on an observed route is
/// an error rather than negative infinity.
pub fn log_likelihood(probs: &[Vec<f64>], data: &ExperimentData, m: usize) -> Result<f64> {
    check_horizon(data, m)?;
    if probs.len() < m {
        return Err(Error::DimensionMismatch { expected: m, got: probs.len() });
    }
    let mut ll = 0.0;
    for t in 1..=m {
        let row = &data.counts[t];
        let g = &probs[t - 1];
        for (j, (&count, &p)) in row.iter().zip(g).enumerate() {
            if count > 0.0 {
                if p <= 0.0 {
                    return Err(Error::InvalidData(format!(
                        "day {t}: zero predicted probability on observed route {}",
                        j + 1
                    )));
                }
                ll += count * p.ln();
            }
        }
    }
    Ok(ll)
}

/// The entropy bound on the log-likelihood: probabilities equal to the
/// empirical frequencies.
pub fn entropy_bound(network: &Network, data: &ExperimentData, m: usize) -> Result<f64> {
    check_horizon(data, m)?;
    let mut ll = 0.0;
    for t in 1..=m {
        let row = &data.counts[t];
        for od in network.od_pairs() {
            for i in od.route_range() {
                if row[i] > 0.0 {
                    ll += row[i] * (row[i] / od.demand).ln();
                }
            }
        }
    }
    Ok(ll)
}

// --- chi-square survival via regularized incomplete gamma ---

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 5, n = 6
    const COEF: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let tmp = x + 5.5 - (x + 0.5) * (x + 5.5).ln();
    let mut ser = 1.000000000190015;
    for (j, &c) in COEF.iter().enumerate() {
        ser += c / (x + 1.0 + j as f64);
    }
    -tmp + (2.5066282746310005 * ser / x).ln()
}

fn gamma_series_p(a: f64, x: f64) -> f64 {
    // lower regularized incomplete gamma by series, x < a + 1
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut del = sum;
    for _ in 0..500 {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * 1e-15 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_cf_q(a: f64, x: f64) -> f64 {
    // upper regularized incomplete gamma by continued fraction, x >= a + 1
    const FPMIN: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / FPMIN;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = b + an / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-15 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Survival function of the chi-square distribution with `df` degrees of
/// freedom: the regularized upper incomplete gamma `Q(df/2, x/2)`.
pub fn chi2_sf(x: f64, df: usize) -> f64 {
    if x <= 0.0 || df == 0 {
        return 1.0;
    }
    let a = df as f64 / 2.0;
    let xh = x / 2.0;
    if xh < a + 1.0 {
        1.0 - gamma_series_p(a, xh)
    } else {
        gamma_cf_q(a, xh)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LrTestResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Likelihood-ratio test of a restricted model against a fuller one.
pub fn lr_test(ll_restricted: f64, ll_full: f64, df: usize) -> Result<LrTestResult> {
    if df == 0 {
        return Err(Error::InvalidParameter("df must be at least 1".into()));
    }
    let statistic = 2.0 * (ll_full - ll_restricted);
    if statistic < -1e-9 {
        return Err(Error::InvalidParameter(format!(
            "negative LR statistic {statistic}: full model must dominate"
        )));
    }
    let statistic = statistic.max(0.0);
    Ok(LrTestResult { statistic, df, p_value: chi2_sf(statistic, df) })
}

// --- day-0 state selection ---

fn share_grid(resolution: f64) -> Vec<f64> {
    let n = (1.0 / resolution).round() as usize;
    (0..=n).map(|i| (i as f64 * resolution).min(1.0)).collect()
}

/// One-day update of a single OD block under the NTP dynamic with fixed
/// predicted costs (class splits do not move the day-0 aggregate, so the
/// predicted costs are shared by every candidate).
fn od_one_step(
    class_od_flows: &[Vec<f64>],
    pred_costs_od: &[Vec<f64>],
    shares: &[f64],
    demand: f64,
    params: &NtpParams,
) -> Vec<f64> {
    let n = class_od_flows[0].len();
    let mut agg = vec![0.0; n];
    for (k, flow) in class_od_flows.iter().enumerate() {
        let z: Vec<f64> = flow
            .iter()
            .zip(&pred_costs_od[k])
            .map(|(&x, &c)| x - params.gamma * c)
            .collect();
        let (proj, _) = project_scaled_simplex(&z, shares[k] * demand);
        for i in 0..n {
            agg[i] += params.alpha * proj[i] + (1.0 - params.alpha) * flow[i];
        }
    }
    agg
}

/// Enumerate candidate day-0 class splits of one OD's observed counts on a
/// per-route share grid, returning the split minimizing the squared day-1
/// prediction error for that OD. The proportional split is always a
/// candidate.
fn select_od_split(
    observed0: &[f64],
    observed1: &[f64],
    pred_costs_od: &[Vec<f64>],
    shares: &[f64],
    demand: f64,
    params: &NtpParams,
    resolution: f64,
) -> (Vec<Vec<f64>>, f64) {
    let n = observed0.len();
    let kk = shares.len();
    let grid = share_grid(resolution);
    let tol = 1e-9 * (1.0 + demand);

    let evaluate = |split: &[Vec<f64>]| -> f64 {
        let agg = od_one_step(split, pred_costs_od, shares, demand, params);
        agg.iter().zip(observed1).map(|(&a, &b)| (a - b) * (a - b)).sum()
    };

    // proportional fallback
    let proportional: Vec<Vec<f64>> = shares
        .iter()
        .map(|&p| observed0.iter().map(|&x| p * x).collect())
        .collect();
    let mut best = proportional.clone();
    let mut best_err = evaluate(&proportional);

    let mut consider = |split: Vec<Vec<f64>>| {
        let err = evaluate(&split);
        if err < best_err {
            best_err = err;
            best = split;
        }
    };

    match kk {
        1 => {}
        2 => {
            // class-0 share per route; the last route balances the class demand
            let mut stack = vec![0usize; n - 1];
            let target0 = shares[0] * demand;
            loop {
                let mut x0: Vec<f64> = stack
                    .iter()
                    .enumerate()
                    .map(|(i, &gi)| grid[gi] * observed0[i])
                    .collect();
                let partial: f64 = x0.iter().sum();
                let last = target0 - partial;
                if last >= -tol && last <= observed0[n - 1] + tol {
                    x0.push(last.clamp(0.0, observed0[n - 1]));
                    let x1: Vec<f64> = observed0.iter().zip(&x0).map(|(&o, &a)| (o - a).max(0.0)).collect();
                    consider(vec![x0, x1]);
                }
                // advance the odometer
                let mut i = 0;
                loop {
                    if i == n - 1 {
                        return (best, best_err);
                    }
                    stack[i] += 1;
                    if stack[i] < grid.len() {
                        break;
                    }
                    stack[i] = 0;
                    i += 1;
                }
            }
        }
        3 => {
            // (class-0, class-1) share pairs per route with s0 + s1 <= 1
            let pairs: Vec<(f64, f64)> = grid
                .iter()
                .flat_map(|&a| grid.iter().map(move |&b| (a, b)))
                .filter(|&(a, b)| a + b <= 1.0 + 1e-12)
                .collect();
            let t0 = shares[0] * demand;
            let t1 = shares[1] * demand;
            let mut stack = vec![0usize; n - 1];
            loop {
                let mut x0: Vec<f64> = Vec::with_capacity(n);
                let mut x1: Vec<f64> = Vec::with_capacity(n);
                for (i, &pi) in stack.iter().enumerate() {
                    let (a, b) = pairs[pi];
                    x0.push(a * observed0[i]);
                    x1.push(b * observed0[i]);
                }
                let l0 = t0 - x0.iter().sum::<f64>();
                let l1 = t1 - x1.iter().sum::<f64>();
                if l0 >= -tol && l1 >= -tol && l0 + l1 <= observed0[n - 1] + tol {
                    x0.push(l0.max(0.0));
                    x1.push(l1.max(0.0));
                    let x2: Vec<f64> = observed0
                        .iter()
                        .zip(x0.iter().zip(&x1))
                        .map(|(&o, (&a, &b))| (o - a - b).max(0.0))
                        .collect();
                    consider(vec![x0, x1, x2]);
                }
                let mut i = 0;
                loop {
                    if i == n - 1 {
                        return (best, best_err);
                    }
                    stack[i] += 1;
                    if stack[i] < pairs.len() {
                        break;
                    }
                    stack[i] = 0;
                    i += 1;
                }
            }
        }
        _ => {
            // deeper hierarchies fall back to the proportional split
        }
    }
    (best, best_err)
}

/// Choose the day-0 per-class state whose one-step prediction is closest to
/// the observed day-1 aggregate. One class forces the observed aggregate with
/// a trivial split; deeper hierarchies search per-route class-share
/// candidates OD by OD (the day-1 error separates over ODs because every
/// candidate shares the observed day-0 aggregate and hence the same predicted
/// costs). Returns the state and its day-1 RMSE.
pub fn select_initial_state(
    network: &Network,
    profile: &ClassProfile,
    params: &NtpParams,
    data: &ExperimentData,
    share_resolution: f64,
) -> Result<(ClassFlowState, f64)> {
    if data.num_rows() < 2 {
        return Err(Error::InvalidData(
            "initial-state selection needs day 0 and day 1".into(),
        ));
    }
    if !(share_resolution > 0.0 && share_resolution <= 1.0) {
        return Err(Error::InvalidParameter(
            "share resolution must lie in (0, 1]".into(),
        ));
    }
    let observed0 = data.day(0);
    let observed1 = data.day(1);
    let prediction = ntp_predictions(network, observed0, profile, params)?;

    let kk = profile.len();
    let r = network.num_routes();
    let mut class_flows: Vec<Vec<f64>> = vec![vec![0.0; r]; kk];
    let mut total_sq = 0.0;
    for od in network.od_pairs() {
        let range = od.route_range();
        let od0: Vec<f64> = range.clone().map(|i| observed0[i]).collect();
        let od1: Vec<f64> = range.clone().map(|i| observed1[i]).collect();
        let pred_costs_od: Vec<Vec<f64>> = prediction
            .costs
            .iter()
            .map(|c| range.clone().map(|i| c[i]).collect())
            .collect();
        let (split, err) = select_od_split(
            &od0,
            &od1,
            &pred_costs_od,
            profile.shares(),
            od.demand,
            params,
            share_resolution,
        );
        total_sq += err;
        for (k, flows) in split.iter().enumerate() {
            for (j, i) in range.clone().enumerate() {
                class_flows[k][i] = flows[j];
            }
        }
    }
    let day1_rmse = (total_sq / r as f64).sqrt();
    Ok((ClassFlowState::new(0, class_flows, network, profile)?, day1_rmse))
}

// --- grid search ---

#[derive(Debug, Clone, Copy)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl GridAxis {
    pub fn values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if !(self.step > 0.0) || self.max < self.min {
            return out;
        }
        let mut k = 0usize;
        loop {
            let v = self.min + self.step * k as f64;
            if v > self.max + 1e-9 * self.step {
                break;
            }
            out.push(v);
            k += 1;
        }
        out
    }
}

/// Search grid. By default inertia is pinned to 1 and the predicted
/// switching cost to the acting one; the optional axes unlock the full
/// four-parameter search.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub gamma: GridAxis,
    pub p: GridAxis,
    pub share_resolution: f64,
    pub alpha: Option<GridAxis>,
    pub gamma_hat: Option<GridAxis>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            gamma: GridAxis { min: 0.01, max: 1.0, step: 0.002 },
            p: GridAxis { min: 0.01, max: 1.0, step: 0.01 },
            share_resolution: 0.05,
            alpha: None,
            gamma_hat: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub k_levels: usize,
    pub params: NtpParams,
    pub p0: Option<f64>,
    pub p1: Option<f64>,
    pub rmse: f64,
    pub day1_rmse: f64,
    /// Log-likelihood at the RMSE-optimal parameters; absent when the model
    /// puts zero probability on an observed route.
    pub log_likelihood: Option<f64>,
    pub initial_state: ClassFlowState,
    pub evaluations: usize,
}

fn profile_for(k_levels: usize, p0: f64, p1: f64) -> Result<ClassProfile> {
    match k_levels {
        1 => Ok(ClassProfile::single()),
        2 => ClassProfile::two(p0),
        3 => ClassProfile::three(p0, p1),
        _ => Err(Error::InvalidParameter(
            "calibration covers 1 to 3 classes".into(),
        )),
    }
}

fn evaluate_combo(
    network: &Network,
    data: &ExperimentData,
    m: usize,
    k_levels: usize,
    params: &NtpParams,
    p0: f64,
    p1: f64,
    share_resolution: f64,
) -> Result<(f64, f64)> {
    let profile = profile_for(k_levels, p0, p1)?;
    let (state0, day1) = if k_levels == 1 {
        let st =
            ClassFlowState::from_aggregate_proportional(0, data.day(0), network, &profile)?;
        (st, f64::NAN)
    } else {
        select_initial_state(network, &profile, params, data, share_resolution)?
    };
    let traj = Dynamic::Ntp(*params).simulate(network, &profile, state0, m)?;
    Ok((trajectory_rmse(&traj, data, m)?, day1))
}

/// Exhaustive grid search minimizing the RMSE of the simulated flow
/// evolution. Ties break toward smaller gamma, then smaller p0, then smaller
/// p1. Deterministic: evaluations are keyed and reduced in a fixed order.
pub fn grid_search(
    network: &Network,
    data: &ExperimentData,
    m: usize,
    k_levels: usize,
    grid: &GridSpec,
) -> Result<CalibrationResult> {
    check_horizon(data, m)?;
    let gammas = grid.gamma.values();
    if gammas.is_empty() {
        return Err(Error::InvalidParameter("empty gamma grid".into()));
    }
    let ps = grid.p.values();
    let p_combos: Vec<(f64, f64)> = match k_levels {
        1 => vec![(1.0, 0.0)],
        2 => ps.iter().map(|&p0| (p0, 1.0 - p0)).collect(),
        3 => ps
            .iter()
            .flat_map(|&p0| ps.iter().map(move |&p1| (p0, p1)))
            .filter(|&(p0, p1)| p0 + p1 <= 1.0 + 1e-12)
            .collect(),
        _ => {
            return Err(Error::InvalidParameter(
                "calibration covers 1 to 3 classes".into(),
            ))
        }
    };
    if p_combos.is_empty() {
        return Err(Error::InvalidParameter("empty feasible share grid".into()));
    }
    let alphas = grid.alpha.map(|a| a.values()).unwrap_or_else(|| vec![1.0]);
    let gamma_hats = grid.gamma_hat.map(|a| a.values());

    // Full parameter tuples in deterministic order.
    let mut combos: Vec<(f64, f64, f64, f64, f64)> = Vec::new();
    for &gamma in &gammas {
        let hats = gamma_hats.clone().unwrap_or_else(|| vec![gamma]);
        for &gamma_hat in &hats {
            for &alpha in &alphas {
                for &(p0, p1) in &p_combos {
                    combos.push((gamma, gamma_hat, alpha, p0, p1));
                }
            }
        }
    }

    let evaluations = combos.len();
    let best = combos
        .par_iter()
        .map(|&(gamma, gamma_hat, alpha, p0, p1)| {
            let params = NtpParams { alpha, gamma, alpha_hat: alpha, gamma_hat };
            let score = evaluate_combo(
                network, data, m, k_levels, &params, p0, p1, grid.share_resolution,
            )
            .map(|(r, _)| r)
            .unwrap_or(f64::INFINITY);
            (score, gamma, p0, p1, gamma_hat, alpha)
        })
        .reduce(
            || (f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::INFINITY, 0.0, 0.0),
            |a, b| if (b.0, b.1, b.2, b.3) < (a.0, a.1, a.2, a.3) { b } else { a },
        );

    let (best_rmse, gamma, p0, p1, gamma_hat, alpha) = best;
    if !best_rmse.is_finite() {
        return Err(Error::InvalidData(
            "no grid point produced a finite RMSE".into(),
        ));
    }
    let params = NtpParams { alpha, gamma, alpha_hat: alpha, gamma_hat };
    let profile = profile_for(k_levels, p0, p1)?;
    let (state0, day1_rmse) = if k_levels == 1 {
        (
            ClassFlowState::from_aggregate_proportional(0, data.day(0), network, &profile)?,
            f64::NAN,
        )
    } else {
        select_initial_state(network, &profile, &params, data, grid.share_resolution)?
    };
    let traj = Dynamic::Ntp(params).simulate(network, &profile, state0.clone(), m)?;
    let rmse_val = trajectory_rmse(&traj, data, m)?;
    let probs = trajectory_probabilities(network, &traj, m)?;
    let log_likelihood = log_likelihood(&probs, data, m).ok();

    Ok(CalibrationResult {
        k_levels,
        params,
        p0: (k_levels >= 2).then_some(p0),
        p1: (k_levels >= 3).then_some(p1),
        rmse: rmse_val,
        day1_rmse,
        log_likelihood,
        initial_state: state0,
        evaluations,
    })
}

// --- net-flow diagnostic ---

#[derive(Debug, Clone, Copy)]
pub struct NetFlowRow {
    pub day: usize,
    /// 1-based route id.
    pub route: u32,
    /// Rank of the route by previous-day cost within its OD (1 = shortest).
    pub prev_rank: usize,
    pub net_flow: f64,
}

/// For each day `t >= 1`: rank every route by its travel cost under the
/// previous day's observed aggregate, and report the day's net flow change.
pub fn net_flow_diagnostic(network: &Network, data: &ExperimentData) -> Result<Vec<NetFlowRow>> {
    let mut rows = Vec::new();
    for t in 1..data.num_rows() {
        let costs = network.route_costs(data.day(t - 1))?;
        for od in network.od_pairs() {
            let mut order: Vec<usize> = od.route_range().collect();
            order.sort_by(|&a, &b| costs[a].partial_cmp(&costs[b]).unwrap().then(a.cmp(&b)));
            for (rank, &i) in order.iter().enumerate() {
                rows.push(NetFlowRow {
                    day: t,
                    route: network.routes()[i].id,
                    prev_rank: rank + 1,
                    net_flow: data.day(t)[i] - data.day(t - 1)[i],
                });
            }
        }
    }
    Ok(rows)
}

/// Simulate the dynamic and turn the aggregates into an experiment dataset.
/// With `integer_counts`, rounds per OD by largest remainder so every row
/// still sums to the demand.
pub fn generate_synthetic(
    network: &Network,
    profile: &ClassProfile,
    dynamic: &Dynamic,
    initial: ClassFlowState,
    days: usize,
    integer_counts: bool,
) -> Result<ExperimentData> {
    let traj = dynamic.simulate(network, profile, initial, days)?;
    let mut counts: Vec<Vec<f64>> = traj.aggregates().map(|a| a.to_vec()).collect();
    if integer_counts {
        for row in &mut counts {
            for od in network.od_pairs() {
                let range = od.route_range();
                let mut floors: Vec<f64> = range.clone().map(|i| row[i].floor()).collect();
                let mut remainders: Vec<(f64, usize)> = range
                    .clone()
                    .enumerate()
                    .map(|(j, i)| (row[i] - row[i].floor(), j))
                    .collect();
                let missing = (od.demand - floors.iter().sum::<f64>()).round() as usize;
                remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
                for &(_, j) in remainders.iter().take(missing) {
                    floors[j] += 1.0;
                }
                for (j, i) in range.enumerate() {
                    row[i] = floors[j];
                }
            }
        }
    }
    ExperimentData::new(counts, network)
}
