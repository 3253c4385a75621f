use serde::Serialize;

use super::PerfError;
use crate::scalar::Real;

/// FPGA column of the published batch ladder: (batch, inferences/s).
pub const MEASURED_FPGA_LADDER: [(usize, f64); 6] = [
    (1, 2.2e3),
    (10, 0.02e6),
    (100, 0.19e6),
    (1000, 1.75e6),
    (10_000, 6.55e6),
    (100_000, 65.80e6),
];

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(bound = "T: Real")]
pub struct Residual<T> {
    pub batch: usize,
    pub measured: T,
    pub predicted: T,
    /// `(predicted - measured) / measured`.
    pub relative: T,
    /// Measured minus fitted batch time, seconds.
    pub time_s: T,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(bound = "T: Real")]
pub struct Calibration<T> {
    pub call_overhead_s: T,
    pub bw_eff: T,
    pub bytes_in: u32,
    pub residuals: Vec<Residual<T>>,
}

impl<T: Real> Calibration<T> {
    pub fn predict(&self, batch: usize) -> T {
        let b = T::from_usize(batch).expect("batch fits");
        b / (self.call_overhead_s + b * T::from_u32(self.bytes_in).expect("u32 fits") / self.bw_eff)
    }
}

/// Least-squares fit of `T(b) = call_overhead + b * bytes_in / bw_eff` with
/// 64-byte records.
pub fn calibrate<T: Real>(measured: &[(usize, T)]) -> Result<Calibration<T>, PerfError> {
    calibrate_with(measured, 64)
}

/// Closed-form ordinary least squares on batch times `b / throughput`.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn calibrate_with<T: Real>(measured: &[(usize, T)], bytes_in: u32) -> Result<Calibration<T>, PerfError> {
    if measured.len() < 2 {
        return Err(PerfError::Fit(format!("need at least 2 points, got {}", measured.len())));
    }
    if bytes_in == 0 {
        return Err(PerfError::Fit("bytes_in must be positive".into()));
    }
    let mut xs = Vec::with_capacity(measured.len());
    let mut ys = Vec::with_capacity(measured.len());
    for &(b, thr) in measured {
        if b == 0 || !(thr.is_finite() && thr > T::zero()) {
            return Err(PerfError::Fit(format!("point ({b}, {thr}) is not a positive measurement")));
        }
        let x = T::from_usize(b).expect("batch fits");
        xs.push(x);
        ys.push(x / thr);
    }
    let n = T::from_usize(xs.len()).expect("len fits");
    let mx = xs.iter().copied().sum::<T>() / n;
    let my = ys.iter().copied().sum::<T>() / n;
    let sxx: T = xs.iter().map(|&x| (x - mx) * (x - mx)).sum();
    let sxy: T = xs.iter().zip(&ys).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    if !(sxx > T::zero()) {
        return Err(PerfError::Fit("all points share one batch size".into()));
    }
    let slope = sxy / sxx;
    if !(slope > T::zero()) {
        return Err(PerfError::Fit(format!("fitted per-record time {slope} is not positive")));
    }
    let intercept = my - slope * mx;
    let mut cal = Calibration {
        call_overhead_s: intercept,
        bw_eff: T::from_u32(bytes_in).expect("u32 fits") / slope,
        bytes_in,
        residuals: Vec::new(),
    };
    cal.residuals = measured
        .iter()
        .zip(&xs)
        .zip(&ys)
        .map(|((&(batch, thr), &x), &y)| {
            let predicted = cal.predict(batch);
            Residual {
                batch,
                measured: thr,
                predicted,
                relative: (predicted - thr) / thr,
                time_s: y - (intercept + slope * x),
            }
        })
        .collect();
    Ok(cal)
}
