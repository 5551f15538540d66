use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sdvt_core::data::ClassTaxonomy;
use sdvt_core::metrics::{
    bench_throughput, binary_cancer_report, bma, confusion_matrix, pca, tsne, weighted_prf, write_attention_png,
    write_projection_csv, ConfusionMatrix, MetricsReport, TsneConfig,
};
use sdvt_core::vit::{random_images, ViTConfig, ViTModel};
use sdvt_core::Error;

fn cm(rows: &[&[u64]]) -> ConfusionMatrix {
    ConfusionMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn confusion_examples() {
    let m = confusion_matrix(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
    assert_eq!(m.rows(), vec![vec![1, 0], vec![1, 1]]);
    let labels = [0, 2, 2, 1, 0, 2];
    let diag = confusion_matrix(&labels, &labels, 3).unwrap();
    assert_eq!(diag.rows(), vec![vec![2, 0, 0], vec![0, 1, 0], vec![0, 0, 3]]);
    assert!(matches!(confusion_matrix(&[3], &[0], 3), Err(Error::InvalidArgument(_))));
    assert!(matches!(confusion_matrix(&[0, 1], &[0], 3), Err(Error::InvalidArgument(_))));
}

#[test]
fn bma_and_prf_examples() {
    let m = cm(&[&[3, 1], &[1, 1]]);
    assert_eq!(bma(&m).unwrap(), 0.625);
    let w = weighted_prf(&m).unwrap();
    assert_eq!(w.accuracy, 4.0 / 6.0);
    assert!((w.recall - w.accuracy).abs() < 1e-15);
    let perfect = cm(&[&[2, 0], &[0, 5]]);
    assert_eq!(bma(&perfect).unwrap(), 1.0);
    let w = weighted_prf(&perfect).unwrap();
    assert_eq!((w.accuracy, w.precision, w.recall, w.f1), (1.0, 1.0, 1.0, 1.0));
    assert!(matches!(bma(&ConfusionMatrix::new(3)), Err(Error::InvalidArgument(_))));
    assert!(matches!(weighted_prf(&ConfusionMatrix::new(3)), Err(Error::InvalidArgument(_))));
}

#[test]
fn zero_support_and_empty_columns() {
    let m = cm(&[&[2, 0, 0], &[0, 0, 0], &[1, 0, 1]]);
    assert_eq!(bma(&m).unwrap(), (1.0 + 0.5) / 2.0);
    let w = weighted_prf(&m).unwrap();
    assert_eq!(w.per_class[1].precision, 0.0);
    assert_eq!(w.per_class[1].recall, 0.0);
}

#[test]
fn binary_report_examples() {
    let t = ClassTaxonomy::default();
    let mut m = ConfusionMatrix::new(8);
    for c in 0..8 {
        m.add(c, c).unwrap();
    }
    assert_eq!(binary_cancer_report(&m, &t).unwrap().accuracy, 1.0);

    let mel_as_bcc = confusion_matrix(&[2], &[0], 8).unwrap();
    assert_eq!(binary_cancer_report(&mel_as_bcc, &t).unwrap().tp, 1);

    let mut preds = vec![0; 10];
    let mut labels = vec![0; 10];
    preds.extend([1, 1]);
    labels.extend([0, 0]);
    preds.extend([1; 5]);
    labels.extend([1; 5]);
    preds.push(2);
    labels.push(1);
    let m = confusion_matrix(&preds, &labels, 8).unwrap();
    let b = binary_cancer_report(&m, &t).unwrap();
    assert_eq!((b.tp, b.fn_, b.tn, b.fp), (10, 2, 5, 1));
    assert_eq!(b.precision, 10.0 / 11.0);
    assert_eq!(b.recall, 10.0 / 12.0);
}

#[test]
fn report_csv_layout() {
    let r = MetricsReport::from_predictions(&[0, 1, 7, 7], &[0, 1, 7, 6], &ClassTaxonomy::default()).unwrap();
    let csv = r.to_csv();
    assert!(csv.starts_with("metric,value\nbma,"));
    let block: Vec<&str> = csv.split("\n\n").nth(1).unwrap().lines().collect();
    assert_eq!(block[0], "true\\pred,0,1,2,3,4,5,6,7");
    assert_eq!(block.len(), 9);
    assert_eq!(block[7], "6,0,0,0,0,0,0,0,1");
}

fn random_matrix(rng: &mut ChaCha8Rng, k: usize) -> ConfusionMatrix {
    loop {
        let rows: Vec<Vec<u64>> = (0..k).map(|_| (0..k).map(|_| rng.random_range(0..6)).collect()).collect();
        if rows.iter().flatten().sum::<u64>() > 0 {
            return ConfusionMatrix::from_rows(&rows).unwrap();
        }
    }
}

#[test]
fn weighted_recall_is_accuracy_on_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let m = random_matrix(&mut rng, 8);
        let w = weighted_prf(&m).unwrap();
        assert!((w.recall - w.accuracy).abs() < 1e-12);
        let recalls: Vec<f64> = (0..8).filter(|&c| m.row_sum(c) > 0).map(|c| w.per_class[c].recall).collect();
        assert!((bma(&m).unwrap() - recalls.iter().sum::<f64>() / recalls.len() as f64).abs() < 1e-12);
    }
}

fn bench_model(layers: usize) -> ViTModel {
    ViTModel::build(ViTConfig { num_layers: layers, ..ViTConfig::mini() }).unwrap()
}

#[test]
fn bench_contract() {
    let m = bench_model(12);
    let x = random_images(&mut ChaCha8Rng::seed_from_u64(1), 32, &m.config).unwrap();
    let per = 3 * 32 * 32;
    let images: Vec<&[f32]> = x.data().chunks(per).collect();
    let r = bench_throughput(&m, &images, 16, 1, 3, 1).unwrap();
    assert!(r.items_per_second > 0.0 && r.items_per_second.is_finite());
    assert_eq!(r.items_per_second, r.samples as f64 / r.seconds);
    assert_eq!((r.samples, r.repetitions, r.per_rep.len(), r.param_count), (32, 3, 3, m.param_count()));
    assert!(matches!(bench_throughput(&m, &[], 16, 1, 3, 1), Err(Error::InvalidArgument(_))));
    assert!(matches!(bench_throughput(&m, &images, 16, 0, 3, 1), Err(Error::InvalidArgument(_))));
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

/// Median over 7 rounds of `b / a` items/s, each round timing `a` then `b`
/// back to back so slow drift in machine speed cancels within a pair.
fn paired_ratio(mut a: impl FnMut() -> f64, mut b: impl FnMut() -> f64) -> f64 {
    median((0..7).map(|_| {
        let x = a();
        b() / x
    }).collect())
}

#[test]
fn bench_shallow_is_faster_and_stable() {
    let deep = bench_model(12);
    let shallow = bench_model(6);
    let x = random_images(&mut ChaCha8Rng::seed_from_u64(2), 128, &deep.config).unwrap();
    let images: Vec<&[f32]> = x.data().chunks(3 * 32 * 32).collect();
    let ips = |m: &ViTModel, imgs: &[&[f32]]| bench_throughput(m, imgs, 16, 1, 1, 1).unwrap().items_per_second;
    let speedup = paired_ratio(|| ips(&deep, &images[..64]), || ips(&shallow, &images[..64]));
    assert!(speedup > 1.0, "{speedup}");
    let ratio = paired_ratio(|| ips(&deep, &images[..64]), || ips(&deep, &images));
    assert!((0.8..=1.2).contains(&ratio), "{ratio}");
}

/// Points on a random 2-D plane inside `dim` dimensions, with their plane coordinates.
fn planar(n: usize, dim: usize, seed: u64) -> (Vec<f32>, Vec<[f64; 2]>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, 1.0).unwrap();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for _ in 0..2 {
        let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    let offset: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
    let coords: Vec<[f64; 2]> = (0..n).map(|_| [3.0 * normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let points = coords
        .iter()
        .flat_map(|c| (0..dim).map(|j| (offset[j] + c[0] * basis[0][j] + c[1] * basis[1][j]) as f32).collect::<Vec<_>>())
        .collect();
    (points, coords)
}

#[test]
fn pca_preserves_planar_distances() {
    let (points, coords) = planar(60, 16, 3);
    let y = pca(&points, 16).unwrap();
    let mut worst = 0.0f64;
    for i in 0..60 {
        for j in 0..60 {
            let a = ((coords[i][0] - coords[j][0]).powi(2) + (coords[i][1] - coords[j][1]).powi(2)).sqrt();
            let b = ((y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2)).sqrt();
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-4, "{worst}");
    let (points, _) = planar(60, 16, 3);
    assert_eq!(pca(&points, 16).unwrap(), y);
    assert!(matches!(pca(&points[..32], 16), Err(Error::InvalidArgument(_))));
}

fn clusters(seed: u64) -> (Vec<f32>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    let centres: Vec<Vec<f32>> = (0..3).map(|_| (0..64).map(|_| 10.0 * normal.sample(&mut rng)).collect()).collect();
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for i in 0..150 {
        let c = i % 3;
        points.extend(centres[c].iter().map(|m| m + normal.sample(&mut rng)));
        labels.push(c);
    }
    (points, labels)
}

/// Lloyd's k-means with farthest-point initialization.
fn kmeans(y: &[[f64; 2]], k: usize) -> Vec<usize> {
    let d2 = |a: &[f64; 2], b: &[f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    let mut centres = vec![y[0]];
    while centres.len() < k {
        let far = y
            .iter()
            .max_by(|a, b| {
                let da = centres.iter().map(|c| d2(a, c)).fold(f64::INFINITY, f64::min);
                let db = centres.iter().map(|c| d2(b, c)).fold(f64::INFINITY, f64::min);
                da.total_cmp(&db)
            })
            .unwrap();
        centres.push(*far);
    }
    let mut assign = vec![0; y.len()];
    for _ in 0..100 {
        for (a, p) in assign.iter_mut().zip(y) {
            *a = (0..k).min_by(|&i, &j| d2(p, &centres[i]).total_cmp(&d2(p, &centres[j]))).unwrap();
        }
        for (c, centre) in centres.iter_mut().enumerate() {
            let members: Vec<&[f64; 2]> = y.iter().zip(&assign).filter(|(_, a)| **a == c).map(|(p, _)| p).collect();
            if !members.is_empty() {
                let n = members.len() as f64;
                *centre = [members.iter().map(|p| p[0]).sum::<f64>() / n, members.iter().map(|p| p[1]).sum::<f64>() / n];
            }
        }
    }
    assign
}

#[test]
fn tsne_separates_clusters() {
    let (points, labels) = clusters(4);
    let y = tsne(&points, 64, &TsneConfig::default(), 9).unwrap();
    assert_eq!(y.len(), 150);
    let assign = kmeans(&y, 3);
    let mut hits = 0;
    for c in 0..3 {
        let mut votes = [0usize; 3];
        for (a, l) in assign.iter().zip(&labels) {
            if *a == c {
                votes[*l] += 1;
            }
        }
        hits += votes.iter().max().unwrap();
    }
    let purity = hits as f64 / 150.0;
    assert!(purity >= 0.95, "{purity}");
    assert_eq!(tsne(&points, 64, &TsneConfig::default(), 9).unwrap(), y);
}

#[test]
fn tsne_rejects_infeasible_perplexity() {
    let (points, _) = clusters(5);
    let cfg = TsneConfig { perplexity: 60.0, ..TsneConfig::default() };
    assert!(matches!(tsne(&points, 64, &cfg, 0), Err(Error::InvalidArgument(_))));
}

#[test]
fn exports() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("p.csv");
    write_projection_csv(&csv, &[[1.0, 2.5], [-0.5, 0.0]], &[3, 0]).unwrap();
    assert_eq!(std::fs::read_to_string(&csv).unwrap(), "x,y,label\n1,2.5,3\n-0.5,0,0\n");
    assert!(write_projection_csv(&csv, &[[0.0, 0.0]], &[]).is_err());
    let png = dir.path().join("a.png");
    write_attention_png(&png, &[0.0, 1.0, 0.5, 0.25], 2, 8).unwrap();
    let img = image::open(&png).unwrap().to_luma8();
    assert_eq!(img.dimensions(), (8, 8));
    assert_eq!(img.get_pixel(7, 0).0[0], 255);
    assert_eq!(img.get_pixel(0, 7).0[0], 128);
}

proptest! {
    #[test]
    fn matrix_conservation(pairs in prop::collection::vec((0usize..8, 0usize..8), 1..300)) {
        let (preds, labels): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let r = MetricsReport::from_predictions(&preds, &labels, &ClassTaxonomy::default()).unwrap();
        prop_assert_eq!(r.confusion.total(), pairs.len() as u64);
        let t = ClassTaxonomy::default();
        let malignant_rows: u64 = (0..8).filter(|&c| t.is_malignant(c)).map(|c| r.confusion.row_sum(c)).sum();
        prop_assert_eq!(r.binary.tp + r.binary.fn_, malignant_rows);
        prop_assert_eq!(r.binary.tn + r.binary.fp, pairs.len() as u64 - malignant_rows);
        for v in [r.bma, r.accuracy, r.weighted.precision, r.weighted.recall, r.weighted.f1, r.binary.accuracy, r.binary.precision, r.binary.recall, r.binary.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn bma_ignores_row_scaling(seed in any::<u64>(), row in 0usize..5, factor in 1u64..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(&mut rng, 5);
        let mut rows = m.rows();
        rows[row].iter_mut().for_each(|v| *v *= factor);
        let scaled = ConfusionMatrix::from_rows(&rows).unwrap();
        prop_assert!((bma(&m).unwrap() - bma(&scaled).unwrap()).abs() < 1e-12);
    }
}
