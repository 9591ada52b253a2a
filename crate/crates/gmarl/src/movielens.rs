//! MovieLens-100K cold-start user graph.
//!
//! Users who rated the target item are the nodes; the signal is their
//! rating of the item centered on the item's mean. Edges carry Pearson
//! correlations over the other items both users rated.

use std::collections::{HashMap, HashSet};
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use gmarl_core::episode::{Episode, EpisodeSource};
use gmarl_core::graph::{AdjacencyMatrix, AttachmentSpec, AttachmentVector, ExpandingGraphState, SignalModel};
use gmarl_core::rng::{stream, streams};
use rand::seq::SliceRandom;

use crate::error::{io_err, Error, Result};

pub const DEFAULT_ITEM_TITLE: &str = "Star Wars";
pub const INITIAL_USERS: usize = 200;
pub const EDGES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub user: u32,
    pub item: u32,
    pub rating: u8,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Default)]
pub struct RatingsTable {
    pub ratings: Vec<Rating>,
}

impl RatingsTable {
    /// Parses tab-separated `user item rating timestamp` lines.
    pub fn parse<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .has_headers(false)
            .from_reader(reader);
        let mut ratings = Vec::new();
        let mut seen = HashSet::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |i: usize| -> Result<&str> {
                rec.get(i)
                    .map(str::trim)
                    .ok_or_else(|| Error::Data(format!("ratings line {}: missing field {}", line + 1, i + 1)))
            };
            let num = |i: usize| -> Result<u64> {
                let s = field(i)?;
                s.parse()
                    .map_err(|_| Error::Data(format!("ratings line {}: bad number {s:?}", line + 1)))
            };
            let r = Rating {
                user: num(0)? as u32,
                item: num(1)? as u32,
                rating: num(2)? as u8,
                timestamp: num(3)?,
            };
            if !(1..=5).contains(&r.rating) {
                return Err(Error::Data(format!("ratings line {}: rating {} outside 1..=5", line + 1, r.rating)));
            }
            if !seen.insert((r.user, r.item)) {
                return Err(Error::Data(format!(
                    "ratings line {}: duplicate rating of item {} by user {}",
                    line + 1,
                    r.item,
                    r.user
                )));
            }
            ratings.push(r);
        }
        Ok(Self { ratings })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(io_err(path))?;
        Self::parse(std::io::BufReader::new(f))
    }
}

/// Parses the pipe-separated item file (Latin-1) into id -> title.
pub fn parse_items<R: Read>(mut reader: R) -> Result<HashMap<u32, String>> {
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Data(format!("reading items: {e}")))?;
    let text: String = bytes.iter().map(|&b| b as char).collect();
    let mut items = HashMap::new();
    for (line, row) in text.lines().enumerate() {
        if row.trim().is_empty() {
            continue;
        }
        let mut parts = row.split('|');
        let id = parts.next().unwrap_or("");
        let title = parts
            .next()
            .ok_or_else(|| Error::Data(format!("items line {}: missing title", line + 1)))?;
        let id: u32 = id
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("items line {}: bad id {id:?}", line + 1)))?;
        items.insert(id, title.to_string());
    }
    Ok(items)
}

/// Smallest item id whose title starts with `title`.
pub fn find_item(items: &HashMap<u32, String>, title: &str) -> Option<u32> {
    items
        .iter()
        .filter(|(_, t)| t.starts_with(title))
        .map(|(&id, _)| id)
        .min()
}

/// Pearson correlation over co-rated items. Inputs are `(item, rating)`
/// lists sorted by item. 0 when fewer than two items overlap or either
/// side is constant on the overlap.
pub fn pearson_similarity(u: &[(u32, f64)], v: &[(u32, f64)]) -> f64 {
    let mut pairs = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < u.len() && j < v.len() {
        match u[i].0.cmp(&v[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                pairs.push((u[i].1, v[j].1));
                i += 1;
                j += 1;
            }
        }
    }
    if pairs.len() < 2 {
        return 0.0;
    }
    let n = pairs.len() as f64;
    let mu = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut cov, mut vu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in &pairs {
        cov += (a - mu) * (b - mv);
        vu += (a - mu) * (a - mu);
        vv += (b - mv) * (b - mv);
    }
    if vu <= 0.0 || vv <= 0.0 {
        return 0.0;
    }
    (cov / (vu * vv).sqrt()).clamp(-1.0, 1.0)
}

/// Up to `k` strictly positive weights, largest first (ties by index).
pub fn top_positive(candidates: impl Iterator<Item = (usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    let mut pos: Vec<(usize, f64)> = candidates.filter(|&(_, w)| w > 0.0).collect();
    pos.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    pos.truncate(k);
    pos
}

/// Everything needed to draw episodes for one item.
#[derive(Debug, Clone)]
pub struct MovieLensPool {
    pub item: u32,
    /// Eligible users (raters of the item), ascending id.
    pub users: Vec<u32>,
    /// Centered rating of the item per eligible user.
    pub signal: Vec<f64>,
    similarity: Vec<f64>,
}

impl MovieLensPool {
    /// Similarities exclude the target item so the attachment never sees
    /// the value being predicted.
    pub fn build(table: &RatingsTable, item: u32) -> Result<Self> {
        let mut by_user: HashMap<u32, Vec<(u32, f64)>> = HashMap::new();
        let mut target: HashMap<u32, f64> = HashMap::new();
        for r in &table.ratings {
            if r.item == item {
                target.insert(r.user, r.rating as f64);
            } else {
                by_user.entry(r.user).or_default().push((r.item, r.rating as f64));
            }
        }
        if target.is_empty() {
            return Err(Error::Data(format!("no ratings for item {item}")));
        }
        let mut users: Vec<u32> = target.keys().copied().collect();
        users.sort_unstable();
        let mean = target.values().sum::<f64>() / target.len() as f64;
        let signal = users.iter().map(|u| target[u] - mean).collect();
        let lists: Vec<Vec<(u32, f64)>> = users
            .iter()
            .map(|u| {
                let mut l = by_user.remove(u).unwrap_or_default();
                l.sort_unstable_by_key(|p| p.0);
                l
            })
            .collect();
        let m = users.len();
        let mut similarity = vec![0.0; m * m];
        for i in 0..m {
            for j in i + 1..m {
                let s = pearson_similarity(&lists[i], &lists[j]);
                similarity[i * m + j] = s;
                similarity[j * m + i] = s;
            }
        }
        Ok(Self {
            item,
            users,
            signal,
            similarity,
        })
    }

    pub fn load(dir: &Path, title: &str) -> Result<Self> {
        let data = dir.join("u.data");
        let item_file = dir.join("u.item");
        for (what, p) in [("MovieLens ratings (u.data)", &data), ("MovieLens items (u.item)", &item_file)] {
            if !p.exists() {
                return Err(Error::MissingInput {
                    what,
                    path: p.clone(),
                    hint: "point --data (or the config's movielens_dir) at an unpacked ml-100k directory",
                });
            }
        }
        let items = parse_items(std::fs::File::open(&item_file).map_err(io_err(&item_file))?)?;
        let item = find_item(&items, title)
            .ok_or_else(|| Error::Data(format!("no item titled {title:?} in {}", item_file.display())))?;
        Self::build(&RatingsTable::load(&data)?, item)
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn similarity(&self, i: usize, j: usize) -> f64 {
        self.similarity[i * self.users.len() + j]
    }
}

#[derive(Debug, Clone)]
pub struct MovieLensSource {
    pub pool: Arc<MovieLensPool>,
    pub initial_users: usize,
    pub edges: usize,
}

impl MovieLensSource {
    pub fn new(pool: MovieLensPool) -> Self {
        Self {
            pool: Arc::new(pool),
            initial_users: INITIAL_USERS,
            edges: EDGES,
        }
    }
}

/// Random initial users, top-`edges` positive correlations (union
/// symmetrized) among them, then the remaining users in random order, each
/// attaching to its top-`edges` positive correlations with existing users.
pub fn build_movielens_env(source: &MovieLensSource, seed: u64) -> Result<Episode> {
    let pool = &source.pool;
    let n0 = source.initial_users;
    if pool.len() <= n0 {
        return Err(Error::Data(format!(
            "{} users rated item {}, need more than {n0}",
            pool.len(),
            pool.item
        )));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut stream(seed, streams::INITIAL));

    let mut adj = AdjacencyMatrix::zeros(n0);
    for p in 0..n0 {
        let cands = (0..n0).filter(|&q| q != p).map(|q| (q, pool.similarity(order[p], order[q])));
        for (q, w) in top_positive(cands, source.edges) {
            adj.set_edge(p, q, w)?;
        }
    }
    let signal: Vec<f64> = order[..n0].iter().map(|&u| pool.signal[u]).collect();
    let mut attachments = Vec::with_capacity(pool.len() - n0);
    let mut truths = Vec::with_capacity(pool.len() - n0);
    for p in n0..pool.len() {
        let cands = (0..p).map(|q| (q, pool.similarity(order[p], order[q])));
        let picked = top_positive(cands, source.edges);
        attachments.push(AttachmentVector::from_sparse(p, &picked)?);
        truths.push(pool.signal[order[p]]);
    }
    Ok(Episode {
        state: ExpandingGraphState::new(adj, signal)?,
        attachment: AttachmentSpec::Replay(attachments),
        signal: SignalModel::Appended(truths),
    })
}

impl EpisodeSource for MovieLensSource {
    fn episode(&self, seed: u64) -> gmarl_core::Result<Episode> {
        build_movielens_env(self, seed).map_err(|e| match e {
            Error::Core(c) => c,
            other => gmarl_core::Error::InvalidConfig(other.to_string()),
        })
    }

    fn max_horizon(&self) -> Option<usize> {
        Some(self.pool.len().saturating_sub(self.initial_users))
    }
}
