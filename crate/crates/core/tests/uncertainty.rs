use depthadapt_core::dataset::{render_toy_samples, Domain, Image};
use depthadapt_core::model::{DepthNet, ModelSpec, Net};
use depthadapt_core::uncertainty::{
    argmin_score, flip_image, select_by_scores, select_hyperparameters, uncertainty_score,
};
use depthadapt_core::Error;
use proptest::prelude::*;

fn toy_images(n: usize, h: usize, w: usize) -> Vec<Image> {
    render_toy_samples(7, Domain::Target, n, (h, w))
        .unwrap()
        .into_iter()
        .map(|s| s.image)
        .collect()
}

fn small_spec() -> ModelSpec {
    ModelSpec {
        height: 32,
        width: 48,
        depth: 2,
        base_channels: 4,
        max_depth: 80.0,
    }
}

#[test]
fn constant_output_model_scores_zero() {
    let mut net = DepthNet::init(small_spec(), 3).unwrap();
    let head = small_spec().head_conv();
    net.convs_mut()[head]
        .weight
        .iter_mut()
        .for_each(|w| *w = 0.0);
    let s = uncertainty_score(&net, &toy_images(3, 32, 48)).unwrap();
    assert_eq!(s.value, 0.0);
    assert!(s.per_block_means.iter().all(|m| *m == 0.0));
}

#[test]
fn flip_equivariant_model_scores_zero() {
    let mut net = Net::<f64>::new(small_spec(), 5).unwrap();
    for conv in net.convs_mut() {
        if conv.k == 3 {
            let (oc, ic) = (conv.out_c, conv.in_c);
            for o in 0..oc {
                for i in 0..ic {
                    for ky in 0..3 {
                        let base = ((o * ic + i) * 3 + ky) * 3;
                        conv.weight[base + 2] = conv.weight[base];
                    }
                }
            }
        }
    }
    let images = toy_images(2, 32, 48);
    let pred = net.forward(&images[..1]).unwrap().predictions[0].clone();
    let flipped = net.forward(&[flip_image(&images[0])]).unwrap().predictions[0].clone();
    let w = pred.ncols();
    for ((y, x), v) in pred.indexed_iter() {
        assert!((v - flipped[[y, w - 1 - x]]).abs() < 1e-9);
    }
    assert_eq!(uncertainty_score(&net, &images).unwrap().value, 0.0);
}

#[test]
fn fresh_default_net_scores_positive_and_deterministically() {
    let net = DepthNet::init(ModelSpec::default(), 0).unwrap();
    let images = toy_images(8, 64, 96);
    let before = net.checksum();
    let a = uncertainty_score(&net, &images).unwrap();
    let b = uncertainty_score(&net, &images).unwrap();
    assert!(a.value > 0.0);
    assert_eq!(a, b);
    assert_eq!(a.n_images, 8);
    assert_eq!(a.per_block_means.len(), 4);
    assert!((a.per_block_means.iter().sum::<f64>() - a.value).abs() < 1e-12 * a.value);
    assert_eq!(net.checksum(), before);
    let reversed: Vec<_> = images.iter().rev().cloned().collect();
    let c = uncertainty_score(&net, &reversed).unwrap();
    assert!((c.value - a.value).abs() <= 1e-12 * a.value);
}

#[test]
fn empty_image_set_is_an_error() {
    let net = DepthNet::init(small_spec(), 0).unwrap();
    assert!(matches!(
        uncertainty_score(&net, &[]),
        Err(Error::Argument(_))
    ));
}

#[test]
fn published_scores_select_two_to_one() {
    let table = [
        ("7/4", 216.83),
        ("9/2", 198.83),
        ("6/5", 219.29),
        ("8/15", 210.15),
        ("2/1", 170.73),
    ];
    assert_eq!(select_by_scores(&table).unwrap(), "2/1");
    assert_eq!(select_by_scores(&[("only", 3.0)]).unwrap(), "only");
}

#[test]
fn identical_nets_resolve_to_the_first() {
    let net = DepthNet::init(small_spec(), 1).unwrap();
    let images = toy_images(2, 32, 48);
    let pick = select_hyperparameters(&[("a", &net), ("b", &net)], &images).unwrap();
    assert_eq!(pick, "a");
}

proptest! {
    #[test]
    fn argmin_is_scale_invariant(scores in proptest::collection::vec(0.0f64..1e3, 1..10), k in 1e-3f64..1e3) {
        let scaled: Vec<f64> = scores.iter().map(|s| s * k).collect();
        prop_assert_eq!(argmin_score(&scores).unwrap(), argmin_score(&scaled).unwrap());
    }
}
