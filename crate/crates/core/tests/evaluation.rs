use motionsrvf::alignment::KarcherConfig;
use motionsrvf::dataset::{prepare, synth_corpus, ExpressionLabel, PrepareConfig, SynthSpec};
use motionsrvf::evaluation::{
    class_means, class_separation, classical_mds, distance_matrix, export_landmark_frames_svg,
    landmark_frames_svg, scatter_svg, silhouettes, symmetric_eigen, DistanceMatrix,
};
use motionsrvf::geometry::{geodesic_distance, Srvf};
use motionsrvf::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lab(i: usize, c: usize) -> ExpressionLabel {
    ExpressionLabel::new(i, c).unwrap()
}

fn random_srvf(rng: &mut impl Rng) -> Srvf {
    Srvf::normalized(7, 4, (0..28).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn euclidean_matrix(points: &[[f64; 2]], labels: Vec<ExpressionLabel>) -> DistanceMatrix {
    let n = points.len();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            v[i * n + j] = ((points[i][0] - points[j][0]).powi(2) + (points[i][1] - points[j][1]).powi(2)).sqrt();
        }
    }
    DistanceMatrix::from_values(n, v, labels).unwrap()
}

#[test]
fn matrix_basics() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q = random_srvf(&mut rng);
    let one = distance_matrix(std::slice::from_ref(&q), &[lab(0, 1)], false).unwrap();
    assert_eq!(one.values(), &[0.0]);

    let set: Vec<Srvf> = (0..6).map(|_| random_srvf(&mut rng)).chain([q.clone()]).chain([q.clone()]).collect();
    let labels: Vec<_> = (0..8).map(|i| lab(i % 2, 2)).collect();
    let dm = distance_matrix(&set, &labels, false).unwrap();
    assert_eq!(dm.get(6, 7), 0.0);
    for i in 0..8 {
        assert_eq!(dm.get(i, i), 0.0);
        for j in 0..8 {
            assert_eq!(dm.get(i, j), dm.get(j, i));
            assert!((0.0..=std::f64::consts::PI).contains(&dm.get(i, j)));
            let (a, b) = (i.min(j), i.max(j));
            if a != b {
                assert_eq!(dm.get(i, j), geodesic_distance(&set[a], &set[b]).unwrap());
            }
        }
    }
    let aligned = distance_matrix(&set, &labels, true).unwrap();
    assert!(aligned.aligned);
    for (a, u) in aligned.values().iter().zip(dm.values()) {
        assert!(a <= u);
    }

    assert!(matches!(distance_matrix(&[], &[], false), Err(Error::EmptySet)));
    let other = Srvf::normalized(5, 4, vec![0.5; 20]).unwrap();
    assert!(matches!(
        distance_matrix(&[q, other], &[lab(0, 1), lab(0, 1)], false),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn jacobi_matches_closed_form_two_by_two() {
    let (a, b, c) = (2.0, 0.7, -1.0);
    let (vals, vecs) = symmetric_eigen(2, &[a, b, b, c]).unwrap();
    let mean = (a + c) / 2.0;
    let r = (((a - c) / 2.0f64).powi(2) + b * b).sqrt();
    assert!((vals[0] - (mean + r)).abs() < 1e-12);
    assert!((vals[1] - (mean - r)).abs() < 1e-12);
    // A v = lambda v for the first column
    let v = [vecs[0], vecs[2]];
    assert!((a * v[0] + b * v[1] - vals[0] * v[0]).abs() < 1e-12);
    assert!((b * v[0] + c * v[1] - vals[0] * v[1]).abs() < 1e-12);
}

#[test]
fn mds_reproduces_a_planar_configuration() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let points: Vec<[f64; 2]> = (0..12).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5)]).collect();
    let dm = euclidean_matrix(&points, vec![lab(0, 1); 12]);
    let emb = classical_mds(&dm, 2).unwrap();
    assert!(!emb.degenerate);
    for i in 0..12 {
        for j in 0..12 {
            assert!((emb.distance(i, j) - dm.get(i, j)).abs() < 1e-8);
        }
    }
    assert!(emb.stress < 1e-8);
    for c in 0..2 {
        let lead = (0..12).map(|i| emb.point(i)[c]).fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        assert!(lead > 0.0);
    }
}

#[test]
fn mds_triangle_duplicates_and_degenerate_input() {
    let s: f64 = 0.8;
    let h: f64 = s * 3f64.sqrt() / 2.0;
    let dm = euclidean_matrix(&[[0.0, 0.0], [s, 0.0], [s / 2.0, h]], vec![lab(0, 1); 3]);
    let emb = classical_mds(&dm, 2).unwrap();
    for (i, j) in [(0, 1), (1, 2), (0, 2)] {
        assert!((emb.distance(i, j) - s).abs() < 1e-8);
    }

    let dm = euclidean_matrix(&[[0.0, 0.0], [1.0, 0.5], [1.0, 0.5], [0.3, -1.0]], vec![lab(0, 1); 4]);
    let emb = classical_mds(&dm, 2).unwrap();
    assert!(emb.distance(1, 2) < 1e-10);

    let zero = DistanceMatrix::from_values(3, vec![0.0; 9], vec![lab(0, 1); 3]).unwrap();
    let emb = classical_mds(&zero, 2).unwrap();
    assert!(emb.degenerate);
    assert!(emb.coords.iter().all(|c| *c == 0.0));

    assert!(classical_mds(&zero, 3).is_err());
    assert!(DistanceMatrix::from_values(2, vec![0.0, 1.0, 0.5, 0.0], vec![lab(0, 1); 2]).is_err());
}

#[test]
fn mds_of_sphere_distances_is_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let set: Vec<Srvf> = (0..10).map(|_| random_srvf(&mut rng)).collect();
    let dm = distance_matrix(&set, &vec![lab(0, 1); 10], false).unwrap();
    let emb = classical_mds(&dm, 2).unwrap();
    assert!(emb.stress.is_finite() && emb.stress >= 0.0);
    assert!(emb.coords.iter().all(|c| c.is_finite()));
}

#[test]
fn far_singletons_separate_perfectly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let q = random_srvf(&mut rng);
    let set = vec![q.clone(), q.negated()];
    let labels = vec![lab(0, 2), lab(1, 2)];
    let dm = distance_matrix(&set, &labels, false).unwrap();
    let means = vec![Some(set[0].clone()), Some(set[1].clone())];
    let r = class_separation(&dm, &set, &means).unwrap();
    assert_eq!(r.silhouette_mean, 1.0);
    assert_eq!(r.nearest_class_mean_accuracy, 1.0);
    assert_eq!(r.intra_class_mean, 0.0);
    assert!((r.inter_class_mean - std::f64::consts::PI).abs() < 1e-12);

    let dm1 = distance_matrix(&set, &[lab(0, 2), lab(0, 2)], false).unwrap();
    assert!(matches!(silhouettes(&dm1), Err(Error::SingleClass)));
    assert!(matches!(class_separation(&dm1, &set, &means), Err(Error::SingleClass)));
}

fn structured() -> (Vec<Srvf>, Vec<ExpressionLabel>) {
    let spec = SynthSpec {
        classes: 3,
        per_class: 10,
        frames: 10,
        landmarks: 3,
        ..SynthSpec::default()
    };
    let seqs = synth_corpus(&spec, 5).unwrap();
    let cfg = PrepareConfig {
        frames: 10,
        class_mean: KarcherConfig::without_alignment(),
        ..PrepareConfig::default()
    };
    let data = prepare(&seqs, &cfg, "test").unwrap();
    (data.srvfs, data.labels)
}

#[test]
fn shuffled_labels_fall_to_chance() {
    let (set, labels) = structured();
    let cfg = KarcherConfig::without_alignment();
    let dm = distance_matrix(&set, &labels, false).unwrap();
    let truth = class_separation(&dm, &set, &class_means(&set, &labels, &cfg).unwrap()).unwrap();
    assert!(truth.nearest_class_mean_accuracy >= 0.9);
    assert!(truth.silhouette_mean > 0.0);
    assert!(truth.inter_class_mean > truth.intra_class_mean);

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut shuffled = labels.clone();
    let mut accs = Vec::new();
    for _ in 0..100 {
        shuffled.shuffle(&mut rng);
        let dm = distance_matrix(&set, &shuffled, false).unwrap();
        let means = class_means(&set, &shuffled, &cfg).unwrap();
        accs.push(class_separation(&dm, &set, &means).unwrap().nearest_class_mean_accuracy);
    }
    let mean = accs.iter().sum::<f64>() / 100.0;
    let p: f64 = 1.0 / 3.0;
    let half = 1.96 * (p * (1.0 - p) / 30.0).sqrt();
    assert!((mean - p).abs() <= half, "mean shuffled accuracy {mean}");
}

#[test]
fn separation_is_invariant_under_class_renaming() {
    let (set, labels) = structured();
    let cfg = KarcherConfig::without_alignment();
    let perm = [2, 0, 1];
    let renamed: Vec<_> = labels.iter().map(|l| lab(perm[l.index()], 3)).collect();
    let a = {
        let dm = distance_matrix(&set, &labels, false).unwrap();
        class_separation(&dm, &set, &class_means(&set, &labels, &cfg).unwrap()).unwrap()
    };
    let b = {
        let dm = distance_matrix(&set, &renamed, false).unwrap();
        class_separation(&dm, &set, &class_means(&set, &renamed, &cfg).unwrap()).unwrap()
    };
    assert_eq!(a, b);
    let csv = a.to_csv();
    let mut r = csv::Reader::from_reader(csv.as_bytes());
    assert_eq!(r.headers().unwrap().len(), 6);
    assert_eq!(r.records().count(), 1);
}

#[test]
fn svg_outputs_are_well_formed() {
    let names = vec!["anger".to_string(), "a<b & \"c\"".to_string()];
    let empty = scatter_svg(&[], &[], &names).unwrap();
    let doc = roxmltree::Document::parse(&empty).unwrap();
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("circle")).count(), 0);
    let texts: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("text")).filter_map(|n| n.text()).collect();
    assert_eq!(texts, vec!["anger", "a<b & \"c\""]);

    let coords: Vec<[f64; 2]> = (0..7).map(|i| [i as f64, (i * i) as f64]).collect();
    let labels: Vec<_> = (0..7).map(|i| lab(i % 2, 2)).collect();
    let svg = scatter_svg(&coords, &labels, &names).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.root_element().attribute("version"), Some("1.1"));
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("circle")).count(), 7);

    let spec = SynthSpec {
        frames: 5,
        landmarks: 4,
        per_class: 1,
        ..SynthSpec::default()
    };
    let seq = &synth_corpus(&spec, 1).unwrap()[0];
    let svg = landmark_frames_svg(seq);
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("circle")).count(), 20);
    let captions: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("text")).filter_map(|n| n.text()).collect();
    assert_eq!(captions, (0..5).map(|f| format!("frame {f}")).collect::<Vec<_>>());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("frames.svg");
    export_landmark_frames_svg(seq, &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), svg);
}

#[test]
fn distance_csv_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let set: Vec<Srvf> = (0..4).map(|_| random_srvf(&mut rng)).collect();
    let labels: Vec<_> = (0..4).map(|i| lab(i % 2, 2)).collect();
    let dm = distance_matrix(&set, &labels, false).unwrap();
    let csv = dm.to_csv();
    let mut r = csv::Reader::from_reader(csv.as_bytes());
    assert_eq!(r.headers().unwrap().len(), 5);
    for (i, rec) in r.records().enumerate() {
        let rec = rec.unwrap();
        assert_eq!(rec[0].parse::<usize>().unwrap(), labels[i].index());
        for j in 0..4 {
            assert_eq!(rec[j + 1].parse::<f64>().unwrap(), dm.get(i, j));
        }
    }
}
