//! Fixed-length resampling of variable-length recordings by adaptive average
//! pooling.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_CHANNELS: usize = 128;
pub const POOLED_LEN: usize = 256;

/// One subject's multichannel recording, `channels x time` in microvolts.
#[derive(Clone, Debug, PartialEq)]
pub struct EegRecording {
    pub subject_id: String,
    pub values: Tensor,
}

impl EegRecording {
    pub fn new(subject_id: impl Into<String>, values: Tensor) -> Result<Self> {
        match values.dims() {
            [_, t] if *t >= 1 => {}
            [_, 0] => return Err(Error::EmptyInput("recording has zero time points".into())),
            d => return Err(Error::shape(format!("recording must be [C, T], got {d:?}"))),
        }
        if !values.all_finite() {
            return Err(Error::data("recording contains non-finite values"));
        }
        Ok(EegRecording {
            subject_id: subject_id.into(),
            values,
        })
    }

    pub fn channels(&self) -> usize {
        self.values.dims()[0]
    }

    pub fn duration(&self) -> usize {
        self.values.dims()[1]
    }
}

/// Output window `j` averages input indices `[floor(j*T/L), ceil((j+1)*T/L))`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolingMap {
    input_len: usize,
    windows: Vec<(usize, usize)>,
}

impl PoolingMap {
    pub fn new(input_len: usize, target_len: usize) -> Result<Self> {
        if input_len == 0 {
            return Err(Error::EmptyInput("cannot pool a zero-length signal".into()));
        }
        if target_len == 0 {
            return Err(Error::param("pooling target length must be positive"));
        }
        let windows = (0..target_len)
            .map(|j| {
                let start = j * input_len / target_len;
                let end = ((j + 1) * input_len).div_ceil(target_len);
                (start, end)
            })
            .collect();
        Ok(PoolingMap { input_len, windows })
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn windows(&self) -> &[(usize, usize)] {
        &self.windows
    }
}

/// A recording pooled to `channels x 256` (or another fixed target length).
#[derive(Clone, Debug, PartialEq)]
pub struct PooledSignal {
    pub values: Tensor,
}

/// Pools every row of a `[C, T]` tensor to `[C, target_len]`.
pub fn pool_rows<T: Real>(values: &Tensor<T>, target_len: usize) -> Result<Tensor<T>> {
    let [channels, len] = *values.dims() else {
        return Err(Error::shape(format!("pooling expects [C, T], got {:?}", values.dims())));
    };
    let map = PoolingMap::new(len, target_len)?;
    let mut out = Vec::with_capacity(channels * target_len);
    for row in values.data().chunks_exact(len) {
        for &(start, end) in map.windows() {
            let sum = row[start..end].iter().fold(T::zero(), |a, &v| a + v);
            out.push(sum / T::from_usize(end - start).unwrap());
        }
    }
    Tensor::from_vec(&[channels, target_len], out)
}

pub fn adaptive_avg_pool(rec: &EegRecording, target_len: usize) -> Result<PooledSignal> {
    Ok(PooledSignal {
        values: pool_rows(&rec.values, target_len)?,
    })
}
