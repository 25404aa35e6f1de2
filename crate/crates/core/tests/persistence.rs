use mtoo::dataset::{encode_combined, generate_dataset, split, GenerateOptions};
use mtoo::direct::{train_direct, DirectConfig, DirectModel};
use mtoo::machine_models::{Profile, SchemaSet, SystemParameters, ASM_ID};
use mtoo::moo::LATENT_BOUND;
use mtoo::vae::{bundle_kind, VaeBundle, VaeConfig};
use mtoo::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn trained() -> (SchemaSet, VaeBundle, DirectModel, Vec<Vec<f64>>) {
    let s = SchemaSet::for_profile(Profile::Desk);
    let ds = generate_dataset(&s, 200, 3, GenerateOptions::default(), &SystemParameters::default()).unwrap();
    let (tr, va, te) = split(&ds, &s, (0.8, 0.1, 0.1), 1).unwrap();
    let mut c = VaeConfig::for_profile(Profile::Desk, &s);
    c.train.epochs = 2;
    let mut vae = VaeBundle::build(c.clone(), &s).unwrap();
    vae.train(&tr, &va, &s).unwrap();
    let dnn = train_direct(&tr, &va, &s, DirectConfig::new(ASM_ID, c.train)).unwrap();
    let xs = te.records.iter().map(|r| encode_combined(&r.design, &s).unwrap().0).collect();
    (s, vae, dnn, xs)
}

#[test]
fn thousand_probe_round_trip() {
    let (s, vae, dnn, xs) = trained();
    let dir = tempfile::tempdir().unwrap();
    let (pv, pd) = (dir.path().join("vae.json"), dir.path().join("dnn.json"));
    vae.save(&pv).unwrap();
    dnn.save(&pd).unwrap();
    assert_eq!(bundle_kind(&pv).unwrap(), "vae");
    assert_eq!(bundle_kind(&pd).unwrap(), "direct");
    let vae2 = VaeBundle::load(&pv, &s).unwrap();
    let dnn2 = DirectModel::load(&pd, &s).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let zs: Vec<Vec<f64>> = (0..1000)
        .map(|_| (0..vae.latent_dim()).map(|_| rng.random_range(-LATENT_BOUND..LATENT_BOUND)).collect())
        .collect();
    assert_eq!(vae.predict_kpis_batch(&zs).unwrap(), vae2.predict_kpis_batch(&zs).unwrap());
    assert_eq!(vae.decode_batch(&zs).unwrap(), vae2.decode_batch(&zs).unwrap());
    assert_eq!(vae.encode_batch(&xs).unwrap(), vae2.encode_batch(&xs).unwrap());
    assert_eq!(vae.history, vae2.history);

    let bounds = s.asm.native_bounds();
    let ps: Vec<Vec<f64>> = (0..1000)
        .map(|_| bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi).round()).collect())
        .collect();
    assert_eq!(dnn.predict_native_batch(&ps).unwrap(), dnn2.predict_native_batch(&ps).unwrap());

    // saving the reloaded bundle gives the same bytes
    let again = dir.path().join("again.json");
    vae2.save(&again).unwrap();
    assert_eq!(std::fs::read(&pv).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn bundle_rejects_other_profile_and_kind() {
    let (_, vae, dnn, _) = trained();
    let dir = tempfile::tempdir().unwrap();
    let (pv, pd) = (dir.path().join("vae.json"), dir.path().join("dnn.json"));
    vae.save(&pv).unwrap();
    dnn.save(&pd).unwrap();
    let other = SchemaSet::for_profile(Profile::PaperShape);
    assert!(VaeBundle::load(&pv, &other).is_err());
    let desk = SchemaSet::for_profile(Profile::Desk);
    assert!(matches!(VaeBundle::load(&pd, &desk), Err(Error::Format(_))));
    assert!(matches!(DirectModel::load(&pv, &desk), Err(Error::Format(_))));

    let text = std::fs::read_to_string(&pv).unwrap();
    std::fs::write(&pv, &text[..text.len() / 2]).unwrap();
    assert!(VaeBundle::load(&pv, &desk).is_err());
}
