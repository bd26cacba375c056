use std::collections::BTreeMap;
use std::time::Instant;

use hcs_core::benchmarks::relationship_recall;
use hcs_core::data::{GeneAggregateSet, RelationshipDb};
use hcs_core::rng::substream;
use hcs_core::stats::unit;
use rand_distr::{Distribution, StandardNormal};

fn main() {
    let n: usize = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(17000);
    let d = 1024;
    let mut rng = substream(1, &["perf"]);
    let m: BTreeMap<String, Vec<f64>> = (0..n)
        .map(|i| {
            let v: Vec<f64> = (0..d).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
            (format!("g{i:05}"), unit(&v).unwrap())
        })
        .collect();
    let agg = GeneAggregateSet::new(d, m).unwrap();
    let db = RelationshipDb::from_edges("x", (0..1000).map(|i| (format!("g{i:05}"), format!("g{:05}", i + 1))));
    let t = Instant::now();
    let r = relationship_recall(&agg, &db, 0.05, 0.95).unwrap();
    println!("{:?} in {:?}", r, t.elapsed());
}
