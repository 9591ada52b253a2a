//! One episode source type for every preset.

use gmarl_core::episode::{Episode, EpisodeSource, SyntheticSource};

use crate::covid::CovidSource;
use crate::movielens::MovieLensSource;

#[derive(Debug, Clone)]
pub enum DataSource {
    Synthetic(SyntheticSource),
    MovieLens(MovieLensSource),
    Covid(CovidSource),
}

impl EpisodeSource for DataSource {
    fn episode(&self, seed: u64) -> gmarl_core::Result<Episode> {
        match self {
            Self::Synthetic(s) => s.episode(seed),
            Self::MovieLens(s) => s.episode(seed),
            Self::Covid(s) => s.episode(seed),
        }
    }

    fn max_horizon(&self) -> Option<usize> {
        match self {
            Self::Synthetic(s) => s.max_horizon(),
            Self::MovieLens(s) => s.max_horizon(),
            Self::Covid(s) => s.max_horizon(),
        }
    }
}
