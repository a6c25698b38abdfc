use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::modality::{render_modality, ModalityProfile};
use super::phantom::{generate_phantom, PhantomSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    AtoB,
    BtoA,
}

impl Direction {
    pub const ALL: [Direction; 2] = [Direction::AtoB, Direction::BtoA];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::AtoB => "AtoB",
            Direction::BtoA => "BtoA",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "AtoB" => Ok(Direction::AtoB),
            "BtoA" => Ok(Direction::BtoA),
            other => Err(Error::InvalidArgument(format!("unknown direction `{other}`"))),
        }
    }
}

/// One input/target pair rendering the same phantom in two modalities.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub id: u64,
    pub phantom: u64,
    pub direction: Direction,
    pub input: Tensor<f64>,
    pub target: Tensor<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<PairedSample>,
    pub test: Vec<PairedSample>,
}

fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) * 2);
    rng.next_u64()
}

const PHANTOM_STREAM: u64 = 1;
const RENDER_A_STREAM: u64 = 2;
const RENDER_B_STREAM: u64 = 3;

/// Renders phantom `phantom` in both modalities and returns the samples it
/// contributes, AtoB first.
fn phantom_samples(spec: &PhantomSpec, seed: u64, phantom: u64, count: usize) -> Result<Vec<PairedSample>> {
    let map = generate_phantom(spec, derive_seed(seed, PHANTOM_STREAM, phantom))?;
    let a = render_modality(&map, &ModalityProfile::mod_a(), derive_seed(seed, RENDER_A_STREAM, phantom))?;
    let b = render_modality(&map, &ModalityProfile::mod_b(), derive_seed(seed, RENDER_B_STREAM, phantom))?;
    let mut out = vec![PairedSample {
        id: 2 * phantom,
        phantom,
        direction: Direction::AtoB,
        input: a.clone(),
        target: b.clone(),
    }];
    if count > 1 {
        out.push(PairedSample { id: 2 * phantom + 1, phantom, direction: Direction::BtoA, input: b, target: a });
    }
    Ok(out)
}

fn split(spec: &PhantomSpec, seed: u64, first_phantom: u64, n: usize) -> Result<Vec<PairedSample>> {
    let mut samples = Vec::with_capacity(n);
    let mut phantom = first_phantom;
    while samples.len() < n {
        samples.extend(phantom_samples(spec, seed, phantom, n - samples.len())?);
        phantom += 1;
    }
    Ok(samples)
}

/// Each phantom yields an AtoB and a BtoA sample; train and test use
/// disjoint phantoms. An odd count leaves the last phantom with AtoB only.
pub fn make_dataset(n_train: usize, n_test: usize, spec: &PhantomSpec, seed: u64) -> Result<Dataset> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::Config(format!("dataset sizes must be positive, got {n_train}/{n_test}")));
    }
    spec.validate()?;
    let train = split(spec, seed, 0, n_train)?;
    let test = split(spec, seed, n_train.div_ceil(2) as u64, n_test)?;
    Ok(Dataset { train, test })
}

impl Dataset {
    /// Plain-text listing, one `split id direction phantom` line per sample.
    pub fn manifest(&self) -> String {
        let mut out = String::from("# split id direction phantom\n");
        for (name, samples) in [("train", &self.train), ("test", &self.test)] {
            for s in samples {
                out.push_str(&format!("{name} {} {} {}\n", s.id, s.direction, s.phantom));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small() -> PhantomSpec {
        PhantomSpec { size: 32, ..Default::default() }
    }

    #[test]
    fn balanced_and_disjoint() {
        let d = make_dataset(20, 6, &small(), 5).unwrap();
        assert_eq!(d.train.len(), 20);
        assert_eq!(d.test.len(), 6);
        assert_eq!(d.train.iter().filter(|s| s.direction == Direction::AtoB).count(), 10);
        let train: HashSet<_> = d.train.iter().map(|s| s.phantom).collect();
        assert!(d.test.iter().all(|s| !train.contains(&s.phantom)));
    }

    #[test]
    fn pairs_share_anatomy() {
        let d = make_dataset(2, 2, &small(), 1).unwrap();
        let (ab, ba) = (&d.train[0], &d.train[1]);
        assert_eq!(ab.input, ba.target);
        assert_eq!(ab.target, ba.input);
    }

    #[test]
    fn reproducible_manifest() {
        let a = make_dataset(8, 4, &small(), 3).unwrap();
        let b = make_dataset(8, 4, &small(), 3).unwrap();
        assert_eq!(a.manifest(), b.manifest());
        assert_eq!(a, b);
        assert!(a.manifest().contains("test 8 AtoB 4"));
    }

    #[test]
    fn odd_counts() {
        let d = make_dataset(3, 1, &small(), 0).unwrap();
        assert_eq!(d.train.len(), 3);
        assert_eq!(d.test[0].phantom, 2);
    }

    #[test]
    fn direction_round_trip() {
        for d in Direction::ALL {
            assert_eq!(d.as_str().parse::<Direction>().unwrap(), d);
        }
        assert!("AB".parse::<Direction>().is_err());
    }
}
