use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use ilgroup::bench::eval::group_albums;
use ilgroup::bench::io::{write_dataset, ModelFile};
use ilgroup::engine::{run_episode, Mode};
use ilgroup::{irl_train, simulate, Config, Geometry, SimConfig};
use ilgroup_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ilg_last_error()) }.to_str().unwrap().to_owned()
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    data: CString,
    model: CString,
    config: Config,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mut config = Config::default();
    config.sim = SimConfig { n_albums: 3, album_size: Some([10, 18]), identities: [2, 3], ..config.sim };
    config.irl.max_epochs = 10;
    let albums = simulate(&config.sim).unwrap();
    let data = dir.path().join("d.jsonl");
    write_dataset(&data, &albums).unwrap();
    let svm = irl_train(&albums, &config.policy, &config.irl).unwrap().model;
    let model = dir.path().join("m.json");
    ModelFile::svm(svm, config.clone()).save(&model).unwrap();
    Fixture { data: cpath(&data), model: cpath(&model), config, _dir: dir }
}

unsafe fn load(f: &Fixture) -> (*mut IlgDataset, *mut IlgModel) {
    let mut ds = ptr::null_mut();
    let mut model = ptr::null_mut();
    assert_eq!(ilg_dataset_load(f.data.as_ptr(), false, &mut ds), IlgStatus::Ok);
    assert_eq!(ilg_model_load(f.model.as_ptr(), &mut model), IlgStatus::Ok);
    assert!(last_error().is_empty());
    (ds, model)
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(ilg_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn bcubed_worked_example() {
    let gt = [0usize, 0, 1, 1];
    let pred = [0usize, 0, 0, 1];
    let mut out = IlgBcubed::default();
    assert_eq!(unsafe { ilg_bcubed(pred.as_ptr(), gt.as_ptr(), 4, &mut out) }, IlgStatus::Ok);
    assert!((out.precision - 2.0 / 3.0).abs() < 1e-15);
    assert!((out.recall - 0.75).abs() < 1e-15);
    assert!((out.f1 - 12.0 / 17.0).abs() < 1e-15);
}

#[test]
fn bcubed_rejects_null_and_empty() {
    let gt = [0usize, 1];
    let mut out = IlgBcubed::default();
    assert_eq!(unsafe { ilg_bcubed(ptr::null(), gt.as_ptr(), 2, &mut out) }, IlgStatus::NullPointer);
    assert!(last_error().contains("pred"));
    assert_eq!(unsafe { ilg_bcubed(gt.as_ptr(), gt.as_ptr(), 2, ptr::null_mut()) }, IlgStatus::NullPointer);
    assert_eq!(unsafe { ilg_bcubed(ptr::null(), ptr::null(), 0, &mut out) }, IlgStatus::InvalidArgument);
}

#[test]
fn op_cost_of_one_misplaced_item() {
    let gt = [0usize, 0, 0, 1, 1, 1];
    let pred = [0usize, 0, 1, 1, 1, 1];
    let mut cost = -1.0;
    let status = unsafe { ilg_op_cost(pred.as_ptr(), gt.as_ptr(), 6, 1.0, 6.0, 1.0, &mut cost) };
    assert_eq!(status, IlgStatus::Ok);
    assert_eq!(cost, 7.0);
    let status = unsafe { ilg_op_cost(pred.as_ptr(), gt.as_ptr(), 6, -1.0, 6.0, 1.0, &mut cost) };
    assert_eq!(status, IlgStatus::InvalidArgument);
    assert!(!last_error().is_empty());
}

#[test]
fn load_failures_map_to_status() {
    let mut ds = ptr::null_mut();
    let missing = CString::new("/nonexistent/data.jsonl").unwrap();
    assert_eq!(unsafe { ilg_dataset_load(missing.as_ptr(), false, &mut ds) }, IlgStatus::Io);
    assert!(ds.is_null());
    assert_eq!(unsafe { ilg_dataset_load(ptr::null(), false, &mut ds) }, IlgStatus::NullPointer);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{not json}\n").unwrap();
    assert_eq!(unsafe { ilg_dataset_load(cpath(&bad).as_ptr(), false, &mut ds) }, IlgStatus::Parse);
    assert!(last_error().contains("record 1"));

    let model = dir.path().join("m.json");
    std::fs::write(&model, "{\"schema\": 99}").unwrap();
    let mut m = ptr::null_mut();
    let status = unsafe { ilg_model_load(cpath(&model).as_ptr(), &mut m) };
    assert!(matches!(status, IlgStatus::Schema | IlgStatus::Parse), "{status:?}");
    assert!(m.is_null());

    unsafe {
        ilg_dataset_free(ptr::null_mut());
        ilg_model_free(ptr::null_mut());
        assert_eq!(ilg_dataset_album_count(ptr::null()), 0);
        assert_eq!(ilg_model_feature_dim(ptr::null()), 0);
    }
}

#[test]
fn group_album_matches_library() {
    let f = fixture();
    unsafe {
        let (ds, model) = load(&f);
        assert_eq!(ilg_dataset_album_count(ds), 3);
        assert_eq!(ilg_model_feature_dim(model), f.config.policy.features.dim());

        let albums = simulate(&f.config.sim).unwrap();
        let policy = ModelFile::load(Path::new(f.model.to_str().unwrap())).unwrap().policy();
        let expected = group_albums(&albums, &policy, &f.config.policy).unwrap();
        for (i, trace) in expected.iter().enumerate() {
            let mut n = 0;
            assert_eq!(ilg_dataset_album_size(ds, i, &mut n), IlgStatus::Ok);
            let mut labels = vec![usize::MAX; n];
            assert_eq!(ilg_group_album(model, ds, i, labels.as_mut_ptr(), n), IlgStatus::Ok);
            assert_eq!(labels, trace.final_partition.assignment());
        }

        let mut small = vec![0usize; 2];
        assert_eq!(ilg_group_album(model, ds, 0, small.as_mut_ptr(), 2), IlgStatus::Capacity);
        assert_eq!(ilg_group_album(model, ds, 7, small.as_mut_ptr(), 2), IlgStatus::InvalidArgument);
        let mut n = 0;
        assert_eq!(ilg_dataset_album_size(ds, 7, &mut n), IlgStatus::InvalidArgument);
        assert_eq!(ilg_group_album(ptr::null(), ds, 0, small.as_mut_ptr(), 2), IlgStatus::NullPointer);

        ilg_dataset_free(ds);
        ilg_model_free(model);
    }
}

#[test]
fn group_embeddings_matches_library() {
    let f = fixture();
    let album = simulate(&f.config.sim).unwrap().remove(0);
    let dim = album.dim();
    let flat: Vec<f64> = album.items.iter().flat_map(|it| it.embedding.iter().copied()).collect();
    let quality: Vec<f64> = album.items.iter().map(|it| it.quality).collect();
    let policy = ModelFile::load(Path::new(f.model.to_str().unwrap())).unwrap().policy();
    let expected = run_episode("input", &Geometry::from_album(&album), &policy, &f.config.policy, Mode::Inference)
        .unwrap()
        .final_partition
        .assignment();
    unsafe {
        let (ds, model) = load(&f);
        let mut labels = vec![0usize; album.len()];
        let status = ilg_group_embeddings(
            model,
            flat.as_ptr(),
            album.len(),
            dim,
            quality.as_ptr(),
            false,
            labels.as_mut_ptr(),
        );
        assert_eq!(status, IlgStatus::Ok, "{}", last_error());
        assert_eq!(labels, expected);

        // unnormalised input is rejected unless asked to rescale
        let scaled: Vec<f64> = flat.iter().map(|x| 3.0 * x).collect();
        let status = ilg_group_embeddings(model, scaled.as_ptr(), album.len(), dim, quality.as_ptr(), false, labels.as_mut_ptr());
        assert_eq!(status, IlgStatus::InvalidArgument);
        let status = ilg_group_embeddings(model, scaled.as_ptr(), album.len(), dim, quality.as_ptr(), true, labels.as_mut_ptr());
        assert_eq!(status, IlgStatus::Ok);
        assert_eq!(labels, expected);

        let status = ilg_group_embeddings(model, ptr::null(), album.len(), dim, quality.as_ptr(), false, labels.as_mut_ptr());
        assert_eq!(status, IlgStatus::NullPointer);
        let status = ilg_group_embeddings(model, flat.as_ptr(), 0, dim, quality.as_ptr(), false, labels.as_mut_ptr());
        assert_ne!(status, IlgStatus::Ok);

        ilg_dataset_free(ds);
        ilg_model_free(model);
    }
}

#[test]
fn errors_are_per_thread() {
    let gt = [0usize];
    let mut out = IlgBcubed::default();
    assert_eq!(unsafe { ilg_bcubed(ptr::null(), gt.as_ptr(), 1, &mut out) }, IlgStatus::NullPointer);
    let other = std::thread::spawn(last_error).join().unwrap();
    assert!(other.is_empty());
    assert!(!last_error().is_empty());
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ilgroup.h")).unwrap();
    for name in [
        "ilg_last_error",
        "ilg_version",
        "ilg_dataset_load",
        "ilg_dataset_free",
        "ilg_dataset_album_count",
        "ilg_dataset_album_size",
        "ilg_model_load",
        "ilg_model_free",
        "ilg_model_feature_dim",
        "ilg_group_album",
        "ilg_group_embeddings",
        "ilg_bcubed",
        "ilg_op_cost",
    ] {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("ILG_STATUS_NULL_POINTER = 8"));
    assert!(header.contains("typedef struct IlgModel IlgModel;"));
}
