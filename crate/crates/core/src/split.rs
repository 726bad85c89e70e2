use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Subjects used for training versus held out ("masked") for evaluation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectSplit {
    pub train: Vec<String>,
    pub masked: Vec<String>,
}

impl SubjectSplit {
    pub fn k(&self) -> usize {
        self.masked.len()
    }

    pub fn is_train(&self, subject: &str) -> bool {
        self.train.iter().any(|s| s == subject)
    }

    pub fn is_masked(&self, subject: &str) -> bool {
        self.masked.iter().any(|s| s == subject)
    }

    /// Short label such as `mask1:sub03`.
    pub fn label(&self) -> String {
        format!("mask{}:{}", self.k(), self.masked.join("+"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Selection {
    Explicit(Vec<String>),
    Seeded(u64),
}

/// Masks exactly `k` of `subjects`, either the listed ones or a seeded draw.
/// Both sides keep the order of `subjects`.
pub fn make_split(subjects: &[String], k: usize, selection: &Selection) -> Result<SubjectSplit> {
    if k == 0 || k >= subjects.len() {
        return Err(Error::param(format!(
            "mask count {k} must be in [1, {})",
            subjects.len()
        )));
    }
    let masked_set: Vec<String> = match selection {
        Selection::Explicit(list) => {
            if list.len() != k {
                return Err(Error::param(format!("{} subjects listed but k = {k}", list.len())));
            }
            for s in list {
                if !subjects.contains(s) {
                    return Err(Error::param(format!("unknown subject {s:?}")));
                }
            }
            let mut dedup = list.clone();
            dedup.sort();
            dedup.dedup();
            if dedup.len() != k {
                return Err(Error::param("masked subjects listed more than once"));
            }
            list.clone()
        }
        Selection::Seeded(seed) => {
            let mut order: Vec<usize> = (0..subjects.len()).collect();
            RngStream::new(*seed).shuffle(&mut order);
            order[..k].iter().map(|&i| subjects[i].clone()).collect()
        }
    };
    let (masked, train) = subjects.iter().cloned().partition(|s| masked_set.contains(s));
    Ok(SubjectSplit { train, masked })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ten() -> Vec<String> {
        (1..=10).map(|i| format!("sub{i:02}")).collect()
    }

    #[test]
    fn mask_one_and_three() {
        let s = make_split(&ten(), 1, &Selection::Seeded(0)).unwrap();
        assert_eq!((s.train.len(), s.masked.len()), (9, 1));
        let s = make_split(&ten(), 3, &Selection::Seeded(0)).unwrap();
        assert_eq!((s.train.len(), s.masked.len()), (7, 3));
    }

    #[test]
    fn k_out_of_range() {
        assert!(matches!(
            make_split(&ten(), 10, &Selection::Seeded(0)),
            Err(Error::Param(_))
        ));
        assert!(matches!(
            make_split(&ten(), 0, &Selection::Seeded(0)),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn explicit_selection() {
        let s = make_split(&ten(), 2, &Selection::Explicit(vec!["sub03".into(), "sub07".into()])).unwrap();
        assert_eq!(s.masked, vec!["sub03", "sub07"]);
        assert!(s.is_train("sub01") && !s.is_train("sub03"));
        assert!(make_split(&ten(), 1, &Selection::Explicit(vec!["nope".into()])).is_err());
        assert!(make_split(&ten(), 2, &Selection::Explicit(vec!["sub01".into(), "sub01".into()])).is_err());
    }

    proptest! {
        #[test]
        fn disjoint_and_covering(n in 2usize..30, k_frac in 0.0f64..1.0, seed: u64) {
            let subjects: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
            let k = 1 + ((n - 1) as f64 * k_frac) as usize % (n - 1);
            let split = make_split(&subjects, k, &Selection::Seeded(seed)).unwrap();
            prop_assert_eq!(split.masked.len(), k);
            prop_assert!(split.train.iter().all(|s| !split.masked.contains(s)));
            let mut all: Vec<String> = split.train.iter().chain(&split.masked).cloned().collect();
            all.sort();
            let mut expected = subjects.clone();
            expected.sort();
            prop_assert_eq!(all, expected);
            prop_assert_eq!(make_split(&subjects, k, &Selection::Seeded(seed)).unwrap(), split);
        }
    }
}
