use fri_core::capacity::{capacity, CapBudget, CapMethod, GreenBuild, GreenTable, KillMean, RangeBudget};
use fri_core::cluster::{layer_capacity_series, layered_decomposition};
use fri_core::critical::f_d;
use fri_core::fri::{sample_window, FriConfig};
use fri_core::stats::MeanAcc;
use fri_core::{LatticeBox, Point, RngStream};

// The layer series draws the first layer conditioned to be nonempty and reweights.
// Plain window samples around the origin must give the same first-layer mean.
#[test]
fn forced_first_layer_matches_plain_sampling() {
    let (d, t, u) = (3, 6.0, 0.3);
    let kill = KillMean::Finite(t);
    let table = GreenTable::build(d, kill, GreenBuild { table_radius: 16, ..GreenBuild::default_for(d) }).unwrap();
    let reps = 1000;

    let v = u * f_d(d, t).unwrap();
    let series = layer_capacity_series(v, &[Point::origin(d)], 2, reps, &RangeBudget::exact(&table), &RngStream::new(31, 0)).unwrap();
    let forced = series.means[0];

    let budget = CapBudget::exact(&table);
    let plain: MeanAcc = (0..reps as u64)
        .map(|i| {
            let cfg = FriConfig::new(d, u, t, LatticeBox::plain(Point::origin(d), 1), i);
            let s = sample_window(&cfg, &RngStream::new(32, i)).unwrap();
            let l = layered_decomposition(&[Point::origin(d)], &s, 1);
            let sites: Vec<Point> = l.layers.first().map(|_| l.layer_vertices(&s, 0).into_iter().collect()).unwrap_or_default();
            if sites.is_empty() {
                return 0.0;
            }
            capacity(&sites, kill, CapMethod::LastExitSolve, &budget).unwrap().value
        })
        .collect();
    let plain = plain.estimate();

    let z = (forced.value - plain.value).abs() / forced.stderr.hypot(plain.stderr);
    assert!(z < 4.0, "forced {forced:?} vs plain {plain:?} (z = {z:.2})");
    assert!(plain.value > 0.0);
}
