use serde::{Deserialize, Serialize};

use super::CellError;

/// Piecewise-linear open-circuit-voltage table, SOC in [0, 1] to volts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawOcv", into = "RawOcv")]
pub struct OcvCurve {
    soc: Vec<f64>,
    volts: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawOcv {
    soc: Vec<f64>,
    volts: Vec<f64>,
}

impl TryFrom<RawOcv> for OcvCurve {
    type Error = CellError;

    fn try_from(raw: RawOcv) -> Result<Self, Self::Error> {
        OcvCurve::new(raw.soc, raw.volts)
    }
}

impl From<OcvCurve> for RawOcv {
    fn from(curve: OcvCurve) -> Self {
        RawOcv {
            soc: curve.soc,
            volts: curve.volts,
        }
    }
}

impl OcvCurve {
    /// Builds a table. Breakpoints must span exactly [0, 1] and both columns
    /// must be strictly increasing.
    pub fn new(soc: Vec<f64>, volts: Vec<f64>) -> Result<Self, CellError> {
        if soc.len() != volts.len() || soc.len() < 2 {
            return Err(CellError::Param(
                "ocv table needs at least two (soc, volts) pairs of equal length".into(),
            ));
        }
        if soc[0] != 0.0 || soc[soc.len() - 1] != 1.0 {
            return Err(CellError::Param("ocv table must span soc 0..=1".into()));
        }
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0] && w[0].is_finite());
        if !increasing(&soc) || !increasing(&volts) || !volts.iter().all(|v| v.is_finite()) {
            return Err(CellError::Param(
                "ocv table must be strictly increasing in soc and volts".into(),
            ));
        }
        Ok(Self { soc, volts })
    }

    /// LiFePO4-shaped 11-point table: steep knee below 10 % SOC, flat
    /// mid plateau, gentle rise towards full charge.
    pub fn lfp() -> Self {
        let soc = (0..=10).map(|k| k as f64 / 10.0).collect();
        let volts = vec![
            2.70, 3.10, 3.22, 3.27, 3.30, 3.33, 3.41, 3.45, 3.49, 3.53, 3.62,
        ];
        Self::new(soc, volts).expect("built-in table is valid")
    }

    pub fn voltage(&self, soc: f64) -> f64 {
        let soc = soc.clamp(0.0, 1.0);
        let k = segment(&self.soc, soc);
        lerp(
            self.soc[k],
            self.soc[k + 1],
            self.volts[k],
            self.volts[k + 1],
            soc,
        )
    }

    /// Inverse lookup, clamped to the table's voltage range.
    pub fn soc_at(&self, volts: f64) -> f64 {
        let v = volts.clamp(self.volts[0], self.volts[self.volts.len() - 1]);
        let k = segment(&self.volts, v);
        lerp(
            self.volts[k],
            self.volts[k + 1],
            self.soc[k],
            self.soc[k + 1],
            v,
        )
    }

    pub fn min_voltage(&self) -> f64 {
        self.volts[0]
    }

    pub fn max_voltage(&self) -> f64 {
        self.volts[self.volts.len() - 1]
    }
}

fn segment(xs: &[f64], x: f64) -> usize {
    // index k such that xs[k] <= x <= xs[k+1]
    let k = xs.partition_point(|&b| b <= x);
    k.saturating_sub(1).min(xs.len() - 2)
}

fn lerp(x0: f64, x1: f64, y0: f64, y1: f64, x: f64) -> f64 {
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}
