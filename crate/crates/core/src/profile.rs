//! Named bundles of dataset defaults.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::evaluation::DEFAULT_GRADE_THRESHOLD;
use crate::model::ModelConfig;
use crate::text::SkipGramConfig;
use crate::training::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Binary answer-sentence selection, 300-dimensional embeddings.
    Trec,
    /// Graded (1-4) community answers, 100-dimensional embeddings.
    Liveqa,
    /// Small synthetic corpora for quick checks.
    Toy,
}

impl Profile {
    pub const ALL: [Profile; 3] = [Profile::Trec, Profile::Liveqa, Profile::Toy];

    pub fn name(self) -> &'static str {
        match self {
            Profile::Trec => "trec",
            Profile::Liveqa => "liveqa",
            Profile::Toy => "toy",
        }
    }

    pub fn emb_dim(self) -> usize {
        match self {
            Profile::Trec => 300,
            Profile::Liveqa => 100,
            Profile::Toy => 16,
        }
    }

    /// Answer-length bucket edges in tokens.
    pub fn bucket_edges(self) -> Vec<usize> {
        match self {
            Profile::Trec => vec![10, 15, 20, 25, 30, 40],
            Profile::Liveqa => vec![30, 50, 70, 90, 110],
            Profile::Toy => vec![8, 12],
        }
    }

    pub fn grade_threshold(self) -> u32 {
        DEFAULT_GRADE_THRESHOLD
    }

    pub fn epochs(self) -> usize {
        match self {
            Profile::Trec | Profile::Liveqa => 25,
            Profile::Toy => 200,
        }
    }

    pub fn skip_gram(self) -> SkipGramConfig {
        SkipGramConfig::default()
    }

    pub fn model_config(self) -> ModelConfig {
        ModelConfig::with_emb_dim(self.emb_dim())
    }

    pub fn train_config(self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs(),
            seed,
            grade_threshold: self.grade_threshold(),
            ..TrainConfig::default()
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Profile::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown profile {s:?}; expected trec, liveqa or toy")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        assert_eq!(Profile::Trec.emb_dim(), 300);
        assert_eq!(Profile::Liveqa.emb_dim(), 100);
        assert!(Profile::Trec.bucket_edges().contains(&25));
        let live = Profile::Liveqa.bucket_edges();
        assert!(live.contains(&30) && live.contains(&110));
        assert_eq!(Profile::Liveqa.grade_threshold(), 3);
        for p in Profile::ALL {
            assert_eq!(p.name().parse::<Profile>().unwrap(), p);
            assert!(p.bucket_edges().windows(2).all(|w| w[0] < w[1]));
            let t = p.train_config(1);
            assert_eq!((t.batch_size, t.learning_rate), (50, 0.1));
            assert_eq!(p.model_config().lrelu_slope, 0.01002);
        }
        assert!("msmarco".parse::<Profile>().is_err());
    }
}
