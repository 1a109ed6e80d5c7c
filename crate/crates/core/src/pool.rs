//! Capacity-bounded pool of scored candidate networks.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{load_checkpoint, save_checkpoint, ArchitectureDescriptor, LayerSpec, Network, Shape};
use crate::data::{mae, rmse, NormStats, WindowedDataset};
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Seed layers of a fresh pool.
pub fn default_seeds() -> Vec<LayerSpec> {
    vec![LayerSpec::fcn(4), LayerSpec::conv(4), LayerSpec::rnn(4)]
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoolEntry {
    pub network: Network,
    /// Validation RMSE; lower is better.
    pub score: Real,
    /// Insertion sequence number, used to break score ties.
    pub seq: u64,
    /// Episode that produced the entry; `None` for seeds.
    pub origin: Option<usize>,
}

/// Entries sorted by ascending score, ties by insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct NetPool {
    capacity: usize,
    entries: Vec<PoolEntry>,
    next_seq: u64,
}

impl NetPool {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("pool capacity must be at least 1".into()));
        }
        Ok(NetPool {
            capacity,
            entries: Vec::new(),
            next_seq: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn best(&self) -> Option<&PoolEntry> {
        self.entries.first()
    }

    /// Inserts in sorted position and drops the worst entries beyond
    /// capacity. Returns the rank of the new entry if it survived.
    pub fn insert(&mut self, network: Network, score: Real, origin: Option<usize>) -> Result<Option<usize>> {
        if !score.is_finite() {
            return Err(Error::NonFinite(format!("pool score {score}")));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let pos = self.entries.partition_point(|e| e.score <= score);
        self.entries.insert(
            pos,
            PoolEntry {
                network,
                score,
                seq,
                origin,
            },
        );
        self.entries.truncate(self.capacity);
        Ok((pos < self.capacity).then_some(pos))
    }

    /// Uniform draw; the pool is not modified.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<&PoolEntry> {
        if self.entries.is_empty() {
            return Err(Error::Search("cannot sample from an empty pool".into()));
        }
        Ok(&self.entries[rng.random_range(0..self.entries.len())])
    }

    /// Writes `index.json` and one checkpoint per entry into `dir`.
    pub fn save_snapshot(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut index = Vec::with_capacity(self.entries.len());
        for (rank, e) in self.entries.iter().enumerate() {
            let file = format!("net-{rank}.json");
            save_checkpoint(&e.network, &dir.join(&file), true)?;
            index.push(IndexRecord {
                rank,
                seq: e.seq,
                score: e.score,
                tokens: e.network.tokens(),
                params: e.network.param_count(),
                origin: e.origin,
                file,
            });
        }
        let doc = IndexDoc {
            capacity: self.capacity,
            next_seq: self.next_seq,
            entries: index,
        };
        let path = dir.join("index.json");
        std::fs::write(&path, serde_json::to_string_pretty(&doc)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load_snapshot(dir: &Path) -> Result<Self> {
        let path = dir.join("index.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let doc: IndexDoc = serde_json::from_str(&text)?;
        let mut pool = NetPool::new(doc.capacity)?;
        for r in doc.entries {
            let network = load_checkpoint(&dir.join(&r.file))?;
            if network.tokens() != r.tokens {
                return Err(Error::Checkpoint(format!("{}: tokens {} differ from index {}", r.file, network.tokens(), r.tokens)));
            }
            pool.entries.push(PoolEntry {
                network,
                score: r.score,
                seq: r.seq,
                origin: r.origin,
            });
        }
        if pool.entries.len() > pool.capacity || pool.entries.windows(2).any(|w| (w[0].score, w[0].seq) > (w[1].score, w[1].seq)) {
            return Err(Error::Checkpoint("pool index is over capacity or out of order".into()));
        }
        pool.next_seq = doc.next_seq;
        Ok(pool)
    }
}

#[derive(Serialize, Deserialize)]
struct IndexRecord {
    rank: usize,
    seq: u64,
    score: Real,
    tokens: String,
    params: usize,
    origin: Option<usize>,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct IndexDoc {
    capacity: usize,
    next_seq: u64,
    entries: Vec<IndexRecord>,
}

/// Errors of denormalised predictions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: Real,
    pub mae: Real,
}

const EVAL_CHUNK: usize = 512;

/// Denormalised predictions for every sample.
pub fn predict_all(network: &Network, data: &WindowedDataset, stats: &NormStats) -> Result<Vec<Real>> {
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, _) = data.batch(chunk);
        out.extend(network.predict(&x)?.data().iter().map(|&v| stats.denormalize(v)));
    }
    Ok(out)
}

/// RMSE and MAE on the original target scale.
pub fn performance(network: &Network, data: &WindowedDataset, stats: &NormStats) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::Dataset("evaluation split is empty".into()));
    }
    let (w, f) = data.sample_shape();
    let want = network.input_shape();
    if want != Shape::new(w, f) {
        return Err(Error::shape("performance", &[want.time, want.channels], &[w, f]));
    }
    let pred = predict_all(network, data, stats)?;
    let truth = stats.denormalize_all(&data.targets);
    let m = Metrics {
        rmse: rmse(&truth, &pred)?,
        mae: mae(&truth, &pred)?,
    };
    if !m.rmse.is_finite() {
        return Err(Error::NonFinite(format!("evaluation rmse {}", m.rmse)));
    }
    Ok(m)
}

/// Builds one single-layer network per seed, trains and scores each with
/// `train_and_score`, and keeps the best `capacity` of them.
pub fn pool_init(
    capacity: usize,
    input: Shape,
    seeds: &[LayerSpec],
    rng: &mut impl Rng,
    mut train_and_score: impl FnMut(Network) -> Result<(Network, Real)>,
) -> Result<NetPool> {
    let mut pool = NetPool::new(capacity)?;
    for &spec in seeds {
        let d = ArchitectureDescriptor::new(input, vec![spec])?;
        let net = Network::random(d, rng)?;
        let (net, score) = train_and_score(net)?;
        pool.insert(net, score, None)?;
    }
    Ok(pool)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::Array;

    fn net() -> Network {
        let d = ArchitectureDescriptor::from_tokens(Shape::new(4, 1), "fc-2").unwrap();
        Network::random(d, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    fn seqs(p: &NetPool) -> Vec<u64> {
        p.entries().iter().map(|e| e.seq).collect()
    }

    #[test]
    fn prune_and_order() {
        let mut p = NetPool::new(5).unwrap();
        for s in [3.0, 1.0, 4.0, 1.5, 9.0] {
            p.insert(net(), s, None).unwrap();
        }
        assert_eq!(p.insert(net(), 2.0, Some(0)).unwrap(), Some(2));
        assert_eq!(p.len(), 5);
        assert!(p.entries().iter().all(|e| e.score != 9.0));
        assert_eq!(p.insert(net(), 0.5, None).unwrap(), Some(0));
        assert_eq!(p.best().unwrap().score, 0.5);
        assert_eq!(p.insert(net(), 100.0, None).unwrap(), None);
        assert!(p.insert(net(), Real::NAN, None).is_err());
        assert!(NetPool::new(0).is_err());
    }

    #[test]
    fn ties_keep_insertion_order() {
        let mut p = NetPool::new(2).unwrap();
        p.insert(net(), 1.0, None).unwrap();
        p.insert(net(), 1.0, None).unwrap();
        p.insert(net(), 1.0, None).unwrap();
        assert_eq!(seqs(&p), vec![0, 1]);
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut r = ChaCha8Rng::seed_from_u64(42);
        for cap in [1, 3, 5] {
            let mut p = NetPool::new(cap).unwrap();
            let mut history: Vec<(Real, u64)> = vec![];
            let mut seq = 0;
            for _ in 0..1000 {
                if r.random_bool(0.7) {
                    // coarse grid so ties are common
                    let s = r.random_range(0..40) as Real * 0.25;
                    p.insert(net(), s, None).unwrap();
                    history.push((s, seq));
                    seq += 1;
                } else if !p.is_empty() {
                    let before = p.clone();
                    p.sample(&mut r).unwrap();
                    assert_eq!(p, before);
                }
                let mut oracle = history.clone();
                oracle.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                oracle.truncate(cap);
                assert_eq!(seqs(&p), oracle.iter().map(|o| o.1).collect::<Vec<_>>());
                assert!(p.len() <= cap);
            }
        }
    }

    #[test]
    fn sampling_is_uniform() {
        let mut p = NetPool::new(5).unwrap();
        for s in 0..5 {
            p.insert(net(), s as Real, None).unwrap();
        }
        let mut r = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0usize; 5];
        for _ in 0..10_000 {
            counts[p.sample(&mut r).unwrap().seq as usize] += 1;
        }
        let sigma = (10_000.0 * 0.2 * 0.8 as Real).sqrt();
        for c in counts {
            assert!((c as Real - 2000.0).abs() <= 5.0 * sigma, "{counts:?}");
        }
        let mut single = NetPool::new(3).unwrap();
        single.insert(net(), 1.0, None).unwrap();
        assert_eq!(single.sample(&mut r).unwrap().seq, 0);
        assert!(NetPool::new(3).unwrap().sample(&mut r).is_err());
    }

    #[test]
    fn init_keeps_best_seeds() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let scores = [0.3, 0.1, 0.2];
        let mut k = 0;
        let pool = pool_init(3, Shape::new(6, 2), &default_seeds(), &mut r, |n| {
            k += 1;
            Ok((n, scores[k - 1]))
        })
        .unwrap();
        assert_eq!(pool.len(), 3);
        assert_eq!(pool.best().unwrap().network.tokens(), "conv-4");

        let mut k = 0;
        let pool = pool_init(1, Shape::new(6, 2), &default_seeds(), &mut r, |n| {
            k += 1;
            Ok((n, scores[k - 1]))
        })
        .unwrap();
        assert_eq!(pool.len(), 1);
        assert_eq!(pool.best().unwrap().network.tokens(), "conv-4");
    }

    fn dataset(targets: Vec<Real>) -> WindowedDataset {
        let n = targets.len();
        WindowedDataset {
            inputs: Array::zeros(&[n, 4, 1]),
            targets,
            starts: (0..n).collect(),
            target_rows: (0..n).collect(),
        }
    }

    fn identity_stats() -> NormStats {
        NormStats {
            feature_min: vec![0.0],
            feature_max: vec![1.0],
            target_mean: 0.0,
            target_std: 1.0,
        }
    }

    #[test]
    fn performance_values() {
        // zero input through a bias-free network predicts exactly zero
        let m = performance(&net(), &dataset(vec![3.0, 4.0]), &identity_stats()).unwrap();
        assert_eq!(m.rmse, (12.5 as Real).sqrt());
        assert_eq!(m.mae, 3.5);
        let m = performance(&net(), &dataset(vec![0.0; 3]), &identity_stats()).unwrap();
        assert_eq!(m.rmse, 0.0);
        assert!(performance(&net(), &dataset(vec![]), &identity_stats()).is_err());

        let mut big = dataset((0..1500).map(|i| i as Real).collect());
        big.inputs = Array::from_vec(&[1500, 4, 1], (0..6000).map(|i| (i % 7) as Real / 7.0).collect()).unwrap();
        let full = performance(&net(), &big, &identity_stats()).unwrap();
        let pred = predict_all(&net(), &big, &identity_stats()).unwrap();
        let (x, _) = big.batch(&(0..1500).collect::<Vec<_>>());
        let direct = net().predict(&x).unwrap();
        assert_eq!(pred, direct.data());
        assert_eq!(full.rmse, rmse(&big.targets, direct.data()).unwrap());
    }

    #[test]
    fn snapshot_round_trip() {
        let mut p = NetPool::new(3).unwrap();
        for s in [2.0, 1.0, 3.0, 0.5] {
            p.insert(net(), s, Some(s as usize)).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        p.save_snapshot(dir.path()).unwrap();
        assert_eq!(NetPool::load_snapshot(dir.path()).unwrap(), p);
    }
}
