use crate::loss::dsc;
use crate::post::{refine, Connectivity};
use crate::pre::{make_inputs, normalize_volume, InputMode, SIGMA_MIN};
use crate::u2net::{infer, ParamStore, U2NetSpec};
use crate::volume::{Mask, Volume};
use crate::{Error, Result};

/// Fused probabilities for every slice of a raw CT volume (eval mode).
pub fn predict_volume(spec: &U2NetSpec, store: &ParamStore, volume: &Volume, mode: InputMode, batch_size: usize) -> Result<Volume> {
    predict_normalized(spec, store, &normalize_volume(volume, SIGMA_MIN), mode, batch_size)
}

/// Like [`predict_volume`] for a volume that is already normalized.
pub fn predict_normalized(spec: &U2NetSpec, store: &ParamStore, volume: &Volume, mode: InputMode, batch_size: usize) -> Result<Volume> {
    if mode.channels() != spec.input_channels {
        return Err(Error::config(
            "input_mode",
            format!("`{mode}` gives {} channels, network takes {}", mode.channels(), spec.input_channels),
        ));
    }
    spec.check_extent(volume.dims.h, volume.dims.w)?;
    let stack = make_inputs(volume, mode);
    let mut out = Vec::with_capacity(volume.dims.len());
    let idx: Vec<usize> = (0..stack.slices.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let maps = infer(spec, store, &stack.batch(chunk))?;
        let (n, c, h, w) = maps.fuse.dims4("predict")?;
        let plane = h * w;
        for b in 0..n {
            for i in 0..plane {
                let p = (0..c).map(|ch| maps.fuse.data()[(b * c + ch) * plane + i]).sum::<f64>() / c as f64;
                // stay inside (0, 1) after rounding to f32
                out.push((p as f32).clamp(f32::MIN_POSITIVE, 1.0 - f32::EPSILON / 2.0));
            }
        }
    }
    Volume::new(volume.dims, volume.spacing, out)
}

/// DSC of the refined prediction against the truth.
pub fn score_prediction(prob: &Volume, gt: &Mask, t: f64, conn: Connectivity) -> Result<f64> {
    if prob.dims != gt.dims {
        return Err(Error::Shape { what: "evaluation", detail: format!("prediction {} vs truth {}", prob.dims, gt.dims) });
    }
    dsc(&refine(prob, t, conn), gt)
}

#[derive(Clone, Debug)]
pub struct CaseScore {
    pub case: usize,
    /// DSC, or the reason the case could not be scored.
    pub dsc: std::result::Result<f64, String>,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub cases: Vec<CaseScore>,
    /// Mean over scored cases; `None` when none could be scored.
    pub mean: Option<f64>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("case,dsc,error\n");
        for c in &self.cases {
            match &c.dsc {
                Ok(d) => out.push_str(&format!("{},{d},\n", c.case)),
                Err(e) => out.push_str(&format!("{},,\"{}\"\n", c.case, e.replace('"', "'"))),
            }
        }
        if let Some(m) = self.mean {
            out.push_str(&format!("mean,{m},\n"));
        }
        out
    }
}

/// Full pipeline per case: normalize → forward → refine → DSC. A failing
/// case is reported and the rest still run.
pub fn evaluate(
    spec: &U2NetSpec,
    store: &ParamStore,
    cases: &[(Volume, Mask)],
    mode: InputMode,
    t: f64,
    conn: Connectivity,
) -> EvalReport {
    let cases: Vec<CaseScore> = cases
        .iter()
        .enumerate()
        .map(|(case, (v, m))| {
            let score = (|| {
                if v.dims != m.dims {
                    return Err(Error::Shape { what: "evaluation", detail: format!("volume {} vs truth {}", v.dims, m.dims) });
                }
                let prob = predict_volume(spec, store, v, mode, 2)?;
                score_prediction(&prob, m, t, conn)
            })();
            CaseScore { case, dsc: score.map_err(|e| e.to_string()) }
        })
        .collect();
    let ok: Vec<f64> = cases.iter().filter_map(|c| c.dsc.as_ref().ok().copied()).collect();
    let mean = (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64);
    EvalReport { cases, mean }
}
