use pathlaw::asymptotics::{limit_covariance, LimitPath};
use pathlaw::model::{example_model, ExampleB0, ThetaBox, ThetaPoint};
use pathlaw::segment::{Grid, Segment};

#[test]
#[ignore]
fn scan_initial_segments() {
    let bx = ThetaBox::new(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap();
    let grid = Grid::new(0.01, 100, 25).unwrap();
    let t0 = ThetaPoint::new(vec![1.0, 0.5]);
    let m = grid.memory_steps();
    let ramp = |a: f64, b: f64| {
        let knots: Vec<f64> = (0..=m).map(|i| a + (b - a) * i as f64 / m as f64).collect();
        Segment::from_knots(1, knots).unwrap()
    };
    let candidates: Vec<(&str, Segment)> = vec![
        ("const 1.6", Segment::constant(&[1.6], m).unwrap()),
        ("const 0.5", Segment::constant(&[0.5], m).unwrap()),
        ("const -2.5", Segment::constant(&[-2.5], m).unwrap()),
        ("const -1.2", Segment::constant(&[-1.2], m).unwrap()),
        ("const -2.0", Segment::constant(&[-2.0], m).unwrap()),
        ("const -3.0", Segment::constant(&[-3.0], m).unwrap()),
        ("ramp -1 -> 1", ramp(-1.0, 1.0)),
        ("ramp -2 -> 0", ramp(-2.0, 0.0)),
        ("ramp -3 -> -1", ramp(-3.0, -1.0)),
        ("ramp 1.6 -> 1.0", ramp(1.6, 1.0)),
        ("ramp 2 -> 0", ramp(2.0, 0.0)),
    ];
    for (name, xi) in candidates {
        let spec = example_model(ExampleB0::SinCos, bx.clone(), xi).unwrap();
        match LimitPath::build(&spec, &grid, &t0, 8) {
            Ok(limit) => match limit_covariance(&spec, &limit, &t0) {
                Ok(cov) => println!(
                    "{name:>16}: sd1 = {:.3}, sd2 = {:.3}",
                    cov[(0, 0)].sqrt(),
                    cov[(1, 1)].sqrt()
                ),
                Err(e) => println!("{name:>16}: {e}"),
            },
            Err(e) => println!("{name:>16}: {e}"),
        }
    }
}
