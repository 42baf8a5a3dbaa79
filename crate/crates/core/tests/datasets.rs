use std::fs;
use std::io::Write;
use std::path::Path;

use flate2::write::GzEncoder;
use flate2::Compression;
use image::{GrayImage, Luma};
use proptest::prelude::*;

use scatnet::datasets::{
    load_idx, load_idx_dir, load_texture_dir, split_alternating, subsample_train, write_idx, IdxSplit, LabeledDataset,
    TextureOptions,
};
use scatnet::engine::Image;
use scatnet::Error;

fn be(values: &[u32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_be_bytes()).collect()
}

/// Two 2x3 images with labels 7 and 2, written byte by byte.
fn write_fixture(dir: &Path, gz: bool) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut images = be(&[0x803, 2, 2, 3]);
    images.extend_from_slice(&[0, 51, 102, 153, 204, 255, 255, 0, 1, 2, 3, 4]);
    let mut labels = be(&[0x801, 2]);
    labels.extend_from_slice(&[7, 2]);
    let suffix = if gz { ".gz" } else { "" };
    let ip = dir.join(format!("train-images-idx3-ubyte{suffix}"));
    let lp = dir.join(format!("train-labels-idx1-ubyte{suffix}"));
    for (path, bytes) in [(&ip, images), (&lp, labels)] {
        if gz {
            let mut enc = GzEncoder::new(fs::File::create(path).unwrap(), Compression::default());
            enc.write_all(&bytes).unwrap();
            enc.finish().unwrap();
        } else {
            fs::write(path, bytes).unwrap();
        }
    }
    (ip, lp)
}

#[test]
fn idx_fixture_loads_exact_pixels() {
    for gz in [false, true] {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_fixture(dir.path(), gz);
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.image_shape().unwrap(), (2, 3));
        assert_eq!(ds.labels(), &[7, 2]);
        assert_eq!(ds.class_count(), 8);
        assert_eq!(ds.images()[0].data(), &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
        assert_eq!(ds.images()[1].get(1, 2), 4.0 / 255.0);
        assert_eq!(load_idx_dir(dir.path(), IdxSplit::Train).unwrap().labels(), &[7, 2]);
    }
}

#[test]
fn idx_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = write_fixture(dir.path(), false);
    let ds = load_idx(&ip, &lp).unwrap();
    for suffix in ["", ".gz"] {
        let ip2 = dir.path().join(format!("copy-img{suffix}"));
        let lp2 = dir.path().join(format!("copy-lbl{suffix}"));
        write_idx(&ds, &ip2, &lp2).unwrap();
        assert_eq!(load_idx(&ip2, &lp2).unwrap().with_name(ds.name()), ds);
    }
    let raw = dir.path().join("raw-img");
    write_idx(&ds, &raw, dir.path().join("raw-lbl")).unwrap();
    assert_eq!(fs::read(raw).unwrap(), fs::read(ip).unwrap());
}

#[test]
fn malformed_idx_files_report_offsets() {
    let dir = tempfile::tempdir().unwrap();
    let (ip, lp) = write_fixture(dir.path(), false);
    // Labels file carrying the image magic.
    let bad = dir.path().join("bad-labels");
    let mut bytes = be(&[0x803, 2]);
    bytes.extend_from_slice(&[1, 2]);
    fs::write(&bad, bytes).unwrap();
    match load_idx(&ip, &bad) {
        Err(Error::Format { path, offset, .. }) => assert_eq!((path, offset), (bad.clone(), 0)),
        other => panic!("unexpected {other:?}"),
    }
    // Truncated pixel block.
    let short = dir.path().join("short-images");
    fs::write(&short, &fs::read(&ip).unwrap()[..20]).unwrap();
    assert!(matches!(load_idx(&short, &lp), Err(Error::Format { offset: 20, .. })));
    // Count mismatch.
    let three = dir.path().join("three-labels");
    let mut bytes = be(&[0x801, 3]);
    bytes.extend_from_slice(&[1, 2, 3]);
    fs::write(&three, bytes).unwrap();
    assert!(matches!(load_idx(&ip, &three), Err(Error::Format { offset: 4, .. })));
    // Missing file names the path.
    let missing = dir.path().join("nope");
    let err = load_idx(&missing, &lp).unwrap_err();
    assert!(err.to_string().contains("nope"), "{err}");
}

fn write_gray(path: &Path, w: u32, h: u32, f: impl Fn(u32, u32) -> u8) {
    GrayImage::from_fn(w, h, |x, y| Luma([f(x, y)])).save(path).unwrap();
}

#[test]
fn texture_directories_load_in_lexicographic_order() {
    let dir = tempfile::tempdir().unwrap();
    for (class, shade) in [("bark", 40u8), ("aluminium", 200u8)] {
        let class_dir = dir.path().join(class);
        fs::create_dir(&class_dir).unwrap();
        for i in 0..3u8 {
            write_gray(&class_dir.join(format!("img{i}.png")), 200, 200, |x, y| {
                // Mark the centered 128x128 window.
                if (36..164).contains(&x) && (36..164).contains(&y) {
                    shade + i
                } else {
                    0
                }
            });
        }
    }
    fs::write(dir.path().join("README.txt"), "not a class").unwrap();
    let options = TextureOptions {
        patch_size: 128,
        per_class: None,
        normalize: false,
    };
    let (ds, names) = load_texture_dir(dir.path(), &options).unwrap();
    assert_eq!(names, vec!["aluminium", "bark"]);
    assert_eq!(ds.len(), 6);
    assert_eq!(ds.labels(), &[0, 0, 0, 1, 1, 1]);
    assert_eq!(ds.image_shape().unwrap(), (128, 128));
    // The crop is exactly the marked window.
    for (img, shade) in ds.images().iter().zip([200u8, 201, 202, 40, 41, 42]) {
        let v = shade as f32 / 255.0;
        assert!(img.data().iter().all(|p| *p == v as f64));
    }
    let (train, test) = split_alternating(&ds);
    assert_eq!((train.len(), test.len()), (4, 2));
}

#[test]
fn texture_loader_resizes_small_images_and_normalizes() {
    let dir = tempfile::tempdir().unwrap();
    let class_dir = dir.path().join("only");
    fs::create_dir(&class_dir).unwrap();
    write_gray(&class_dir.join("a.pgm"), 20, 30, |x, y| ((x * 7 + y * 3) % 256) as u8);
    let (ds, _) = load_texture_dir(dir.path(), &TextureOptions::new(32)).unwrap();
    assert_eq!(ds.image_shape().unwrap(), (32, 32));
    assert!((ds.images()[0].norm_sq() - 1.0).abs() < 1e-12);
}

#[test]
fn empty_class_directory_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("full")).unwrap();
    write_gray(&dir.path().join("full").join("x.png"), 8, 8, |_, _| 9);
    fs::create_dir(dir.path().join("hollow")).unwrap();
    let err = load_texture_dir(dir.path(), &TextureOptions::new(8)).unwrap_err();
    assert!(matches!(&err, Error::Data(m) if m.contains("hollow")), "{err}");
}

fn labeled(labels: Vec<usize>, classes: usize) -> LabeledDataset {
    let images = (0..labels.len())
        .map(|i| Image::from_fn(1, 1, |_, _| i as f64))
        .collect();
    LabeledDataset::new("p", images, labels, classes).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stratified_subsets_keep_proportions(
        counts in prop::collection::vec(5usize..40, 2..6),
        frac in 0.05f64..1.0,
        seed in any::<u64>(),
    ) {
        let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        let ds = labeled(labels, counts.len());
        let size = ((ds.len() as f64 * frac) as usize).max(counts.len());
        let sub = subsample_train(&ds, size, seed).unwrap();
        prop_assert_eq!(sub.len(), size);
        prop_assert_eq!(&sub, &subsample_train(&ds, size, seed).unwrap());
        let per_class = size as f64 / counts.len() as f64;
        for (c, &n) in sub.class_counts().iter().enumerate() {
            // Balanced up to the remainder unless the class is exhausted.
            prop_assert!(n == counts[c] || (n as f64 - per_class).abs() <= 1.0 || n as f64 > per_class);
        }
        // Original order is preserved.
        let idx: Vec<f64> = sub.images().iter().map(|i| i.get(0, 0)).collect();
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }
}
