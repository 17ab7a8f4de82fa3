use u2seg_tensor::Tensor;

use crate::pre::{make_inputs, normalize_volume, split_train_test, InputMode, SIGMA_MIN};
use crate::volume::{Mask, Volume};
use crate::{Error, Result};

/// One training unit: a C×H×W input slice and its 1×H×W target.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub case: usize,
    pub slice: usize,
    pub input: Tensor,
    pub target: Tensor,
}

/// Normalizes a raw CT volume and pairs each slice with its mask slice.
pub fn case_samples(case: usize, volume: &Volume, mask: &Mask, mode: InputMode) -> Result<Vec<Sample>> {
    if volume.dims != mask.dims {
        return Err(Error::Shape { what: "case", detail: format!("case {case}: volume {} vs mask {}", volume.dims, mask.dims) });
    }
    let stack = make_inputs(&normalize_volume(volume, SIGMA_MIN), mode);
    let (h, w) = (mask.dims.h, mask.dims.w);
    Ok(stack
        .slices
        .into_iter()
        .map(|s| {
            let target = Tensor::new(vec![1, h, w], mask.slice(s.index).iter().map(|&v| v as f64).collect()).expect("slice-sized");
            Sample { case, slice: s.index, input: s.tensor, target }
        })
        .collect())
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub train: Vec<Sample>,
    /// Held-out slices; may be empty.
    pub val: Vec<Sample>,
}

impl Dataset {
    /// Splits whole cases (never slices of one case) into train and
    /// validation sets.
    pub fn from_cases(cases: &[(Volume, Mask)], test_fraction: f64, seed: u64, mode: InputMode) -> Result<Self> {
        let ids: Vec<usize> = (0..cases.len()).collect();
        let (train_ids, val_ids) = split_train_test(&ids, test_fraction, seed)?;
        let collect = |ids: &[usize]| -> Result<Vec<Sample>> {
            let mut out = Vec::new();
            for &i in ids {
                out.extend(case_samples(i, &cases[i].0, &cases[i].1, mode)?);
            }
            Ok(out)
        };
        Ok(Dataset { train: collect(&train_ids)?, val: collect(&val_ids)? })
    }
}

/// Stacks inputs and targets of the picked samples into N×C×H×W / N×1×H×W.
pub fn batch(samples: &[Sample], picks: &[usize]) -> (Tensor, Tensor) {
    let stack = |f: &dyn Fn(&Sample) -> &Tensor| {
        let first = f(&samples[picks[0]]).shape().to_vec();
        let mut shape = vec![picks.len()];
        shape.extend(first);
        let data = picks.iter().flat_map(|&k| f(&samples[k]).data().iter().copied()).collect();
        Tensor::new(shape, data).expect("samples share one shape")
    };
    (stack(&|s| &s.input), stack(&|s| &s.target))
}
