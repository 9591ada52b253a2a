//! City case-count graph: 5-nearest-neighbor great-circle graph over
//! cities, signal is the standardized case count on a fixed day.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use gmarl_core::episode::{Episode, EpisodeSource};
use gmarl_core::graph::{AdjacencyMatrix, AttachmentSpec, AttachmentVector, ExpandingGraphState, SignalModel};
use gmarl_core::rng::{stream, streams, Stream};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{io_err, Error, Result};

pub const INITIAL_CITIES: usize = 30;
pub const NEIGHBORS: usize = 5;
pub const SNAPSHOT_DAY: usize = 100;
pub const CITY_COUNT: usize = 269;

const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, PartialEq)]
pub struct City {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    /// Cumulative or daily counts, one per day column.
    pub cases: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CityTable {
    pub cities: Vec<City>,
    pub days: usize,
}

impl CityTable {
    /// Header `city id, lat, lon, day columns...`. Rows with a missing or
    /// unparsable coordinate are skipped with a warning.
    pub fn parse<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let days = rdr.headers()?.len().saturating_sub(3);
        if days == 0 {
            return Err(Error::Data("city table needs at least one day column".into()));
        }
        let mut cities = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = line + 2;
            let id = rec.get(0).unwrap_or("").to_string();
            let coord = |i: usize| rec.get(i).and_then(|s| s.parse::<f64>().ok()).filter(|v| v.is_finite());
            let (Some(lat), Some(lon)) = (coord(1), coord(2)) else {
                log::warn!("city table row {row} ({id}): missing coordinates, skipped");
                continue;
            };
            let mut cases = Vec::with_capacity(days);
            for d in 0..days {
                let s = rec.get(3 + d).unwrap_or("");
                let v: f64 = s
                    .parse()
                    .map_err(|_| Error::Data(format!("city table row {row}: bad count {s:?} on day {}", d + 1)))?;
                if !(v >= 0.0) {
                    return Err(Error::Data(format!("city table row {row}: negative count on day {}", d + 1)));
                }
                cases.push(v.round() as u64);
            }
            cities.push(City { id, lat, lon, cases });
        }
        Ok(Self { cities, days })
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput {
                what: "city case table",
                path: path.to_path_buf(),
                hint: "pass --data <csv>, or create a stand-in table with `gmarl ingest covid-synthetic`",
            });
        }
        let f = std::fs::File::open(path).map_err(io_err(path))?;
        Self::parse(std::io::BufReader::new(f))
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["city".to_string(), "lat".into(), "lon".into()];
        header.extend((1..=self.days).map(|d| format!("day{d}")));
        w.write_record(&header)?;
        for c in &self.cities {
            let mut row = vec![c.id.clone(), format!("{:.5}", c.lat), format!("{:.5}", c.lon)];
            row.extend(c.cases.iter().map(u64::to_string));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::Data(format!("writing city table: {e}")))?;
        Ok(())
    }
}

/// Great-circle distance in kilometers.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Indices of the `k` nearest candidates to `city` (never itself), nearest
/// first, ties by index.
pub fn nearest(cities: &[City], city: usize, candidates: &[usize], k: usize) -> Vec<usize> {
    let c = &cities[city];
    let mut d: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|&&j| j != city)
        .map(|&j| (haversine_km(c.lat, c.lon, cities[j].lat, cities[j].lon), j))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().take(k).map(|(_, j)| j).collect()
}

#[derive(Debug, Clone)]
pub struct CovidSource {
    pub table: Arc<CityTable>,
    pub initial_cities: usize,
    pub neighbors: usize,
    /// 1-based day whose counts form the signal.
    pub day: usize,
}

impl CovidSource {
    pub fn new(table: CityTable) -> Self {
        Self {
            table: Arc::new(table),
            initial_cities: INITIAL_CITIES,
            neighbors: NEIGHBORS,
            day: SNAPSHOT_DAY,
        }
    }
}

/// Shuffled cities; symmetrized binary k-NN graph on the first
/// `initial_cities`; each later city attaches to its k nearest existing
/// cities. Counts are z-scored with the initial cities' mean and spread.
pub fn build_covid_env(source: &CovidSource, seed: u64) -> Result<Episode> {
    let table = &source.table;
    let n = table.cities.len();
    let n0 = source.initial_cities;
    if source.day == 0 || source.day > table.days {
        return Err(Error::Config(format!("day {} outside 1..={}", source.day, table.days)));
    }
    if n <= n0 || n0 <= source.neighbors {
        return Err(Error::Data(format!(
            "{n} cities cannot seed {n0} initial cities with {}-nearest neighbors",
            source.neighbors
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, streams::INITIAL));

    let initial = &order[..n0];
    let mut adj = AdjacencyMatrix::zeros(n0);
    for (p, &city) in initial.iter().enumerate() {
        for j in nearest(&table.cities, city, initial, source.neighbors) {
            let q = initial.iter().position(|&c| c == j).expect("initial city");
            adj.set_edge(p, q, 1.0)?;
        }
    }
    let raw = |c: usize| table.cities[c].cases[source.day - 1] as f64;
    let mean = initial.iter().map(|&c| raw(c)).sum::<f64>() / n0 as f64;
    let var = initial.iter().map(|&c| (raw(c) - mean).powi(2)).sum::<f64>() / n0 as f64;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    let z = |c: usize| (raw(c) - mean) / sd;

    let signal = initial.iter().map(|&c| z(c)).collect();
    let mut attachments = Vec::with_capacity(n - n0);
    let mut truths = Vec::with_capacity(n - n0);
    for p in n0..n {
        let existing = &order[..p];
        let picked: Vec<(usize, f64)> = nearest(&table.cities, order[p], existing, source.neighbors)
            .into_iter()
            .map(|j| (existing.iter().position(|&c| c == j).expect("existing city"), 1.0))
            .collect();
        attachments.push(AttachmentVector::from_sparse(p, &picked)?);
        truths.push(z(order[p]));
    }
    Ok(Episode {
        state: ExpandingGraphState::new(adj, signal)?,
        attachment: AttachmentSpec::Replay(attachments),
        signal: SignalModel::Appended(truths),
    })
}

impl EpisodeSource for CovidSource {
    fn episode(&self, seed: u64) -> gmarl_core::Result<Episode> {
        build_covid_env(self, seed).map_err(|e| match e {
            Error::Core(c) => c,
            other => gmarl_core::Error::InvalidConfig(other.to_string()),
        })
    }

    fn max_horizon(&self) -> Option<usize> {
        Some(self.table.cities.len().saturating_sub(self.initial_cities))
    }
}

/// Stand-in city table with spatially correlated outbreaks: cities spread
/// over a continental box, a handful of outbreak centers seeding logistic
/// growth whose onset is delayed with distance, and lognormal city sizes.
pub fn synthetic_city_table(cities: usize, days: usize, seed: u64) -> CityTable {
    let mut rng: Stream = stream(seed, streams::INITIAL);
    let centers: Vec<(f64, f64, f64)> = (0..6)
        .map(|_| (rng.random_range(28.0..47.0), rng.random_range(-122.0..-72.0), rng.random_range(0.5..1.5)))
        .collect();
    let normal = |rng: &mut Stream| -> f64 { StandardNormal.sample(rng) };
    let cities = (0..cities)
        .map(|i| {
            let lat = rng.random_range(26.0..48.0);
            let lon = rng.random_range(-123.0..-70.0);
            let size = (normal(&mut rng) * 0.4).exp();
            let pressure: f64 = centers
                .iter()
                .map(|&(clat, clon, w)| w * (-haversine_km(lat, lon, clat, clon) / 600.0).exp())
                .sum();
            let onset = 40.0 + 60.0 * (-pressure).exp();
            let peak = 2000.0 * size * (0.3 + pressure);
            let cases = (1..=days)
                .map(|d| {
                    let level = peak / (1.0 + (-(d as f64 - onset) / 8.0).exp());
                    (level * (1.0 + 0.05 * normal(&mut rng))).max(0.0).round() as u64
                })
                .collect();
            City {
                id: format!("city{:03}", i + 1),
                lat,
                lon,
                cases,
            }
        })
        .collect();
    CityTable { cities, days }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn haversine_known_distance() {
        // one degree of latitude
        let d = haversine_km(0.0, 0.0, 1.0, 0.0);
        assert!((d - 111.195).abs() < 0.01, "{d}");
        assert_eq!(haversine_km(10.0, 20.0, 10.0, 20.0), 0.0);
    }

    #[test]
    fn missing_coordinates_are_skipped() {
        let csv = "city,lat,lon,d1,d2\na,1.0,2.0,3,4\nb,,2.0,1,1\nc,3.0,NaN,1,1\n";
        let t = CityTable::parse(csv.as_bytes()).unwrap();
        assert_eq!(t.cities.len(), 1);
        assert_eq!(t.cities[0].cases, vec![3, 4]);
        assert_eq!(t.days, 2);
    }

    #[test]
    fn negative_counts_rejected() {
        assert!(CityTable::parse("city,lat,lon,d1\na,1,2,-3\n".as_bytes()).is_err());
    }

    #[test]
    fn synthetic_table_round_trips() {
        let t = synthetic_city_table(20, 5, 3);
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        let back = CityTable::parse(&buf[..]).unwrap();
        assert_eq!(back.cities.len(), 20);
        assert_eq!(back.cities[4].cases, t.cities[4].cases);
    }
}
