use rckf_core::noise::{cauchy_sample, gaussian_sample, laplace_sample, NoiseStream};
use statrs::distribution::{Cauchy, ContinuousCDF, Laplace, Normal};

fn ks(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

const N: usize = 100_000;

#[test]
fn gaussian_ks() {
    let mut s = NoiseStream::new(11, 0);
    let xs: Vec<f64> = (0..N).map(|_| gaussian_sample(0.3, 1.7, &mut s)).collect();
    let d = Normal::new(0.3, 1.7).unwrap();
    let stat = ks(xs, |x| d.cdf(x));
    assert!(stat < 0.006, "{stat}");
}

#[test]
fn laplace_ks() {
    let mut s = NoiseStream::new(12, 0);
    let xs: Vec<f64> = (0..N).map(|_| laplace_sample(-1.0, 0.5, &mut s)).collect();
    let d = Laplace::new(-1.0, 0.5).unwrap();
    let stat = ks(xs, |x| d.cdf(x));
    assert!(stat < 0.006, "{stat}");
}

#[test]
fn cauchy_ks() {
    let mut s = NoiseStream::new(13, 0);
    let xs: Vec<f64> = (0..N).map(|_| cauchy_sample(2.0, 0.1, &mut s)).collect();
    let d = Cauchy::new(2.0, 0.1).unwrap();
    let stat = ks(xs, |x| d.cdf(x));
    assert!(stat < 0.006, "{stat}");
}

#[test]
fn streams_are_reproducible_and_distinct() {
    let draw = |seed, stream| {
        let mut s = NoiseStream::new(seed, stream);
        (0..64).map(|_| s.open01()).collect::<Vec<_>>()
    };
    assert_eq!(draw(5, 1), draw(5, 1));
    assert_ne!(draw(5, 1), draw(5, 2));
    assert_ne!(draw(5, 1), draw(6, 1));
}

#[test]
fn channels_are_uncorrelated() {
    let n = 200_000;
    let mut a = NoiseStream::new(21, 0);
    let mut b = NoiseStream::new(21, 1);
    let xs: Vec<f64> = (0..n).map(|_| a.standard_normal()).collect();
    let ys: Vec<f64> = (0..n).map(|_| b.standard_normal()).collect();
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n as f64;
    let sx = (xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n as f64).sqrt();
    let sy = (ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n as f64).sqrt();
    // 5 standard errors of a zero correlation estimate.
    assert!((cov / (sx * sy)).abs() < 5.0 / (n as f64).sqrt());
}

#[test]
fn open_interval_never_hits_the_ends() {
    let mut s = NoiseStream::new(0, 0);
    for _ in 0..100_000 {
        let u = s.open01();
        assert!(u > 0.0 && u < 1.0);
        let v = s.open_pm1();
        assert!(v > -1.0 && v < 1.0);
    }
    assert!(cauchy_sample(0.0, 1.0, &mut s).is_finite());
}
