//! Reading identity-labelled image corpora and generating toy ones.

use std::fs;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::record::{DatasetManifest, ImageRecord, Provenance};
use super::resample::{degrade, resize, Image, Interpolation};
use crate::error::{ensure, Error, Result};
use crate::rng::rng_for;

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp"];

/// Identity, camera and sequence parsed from a corpus file name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusName {
    pub identity: u32,
    pub camera: u32,
    pub sequence: String,
}

/// Parse `<identity>_<camera>_<seq>.<ext>`.
///
/// The camera field may carry a `c` prefix and trailing non-digits, so
/// Market-1501 names such as `0002_c1s1_000451_03.jpg` parse as identity 2,
/// camera 1.
pub fn parse_corpus_name(file_name: &str) -> Result<CorpusName> {
    let stem = match file_name.rsplit_once('.') {
        Some((stem, _ext)) => stem,
        None => file_name,
    };
    let mut parts = stem.splitn(3, '_');
    let (Some(id), Some(cam), Some(seq)) = (parts.next(), parts.next(), parts.next()) else {
        return Err(Error::invalid(format!(
            "file name `{file_name}` does not follow <identity>_<camera>_<seq>.<ext>"
        )));
    };
    ensure!(
        !id.is_empty() && id.bytes().all(|b| b.is_ascii_digit()),
        "file name `{file_name}`: identity `{id}` is not a non-negative integer"
    );
    let identity: u32 = id
        .parse()
        .map_err(|_| Error::invalid(format!("file name `{file_name}`: identity `{id}` out of range")))?;
    let cam = cam.strip_prefix('c').unwrap_or(cam);
    let digits: &str = &cam[..cam.bytes().take_while(u8::is_ascii_digit).count()];
    ensure!(!digits.is_empty(), "file name `{file_name}`: camera field has no number");
    let camera: u32 = digits
        .parse()
        .map_err(|_| Error::invalid(format!("file name `{file_name}`: camera `{digits}` out of range")))?;
    ensure!(!seq.is_empty(), "file name `{file_name}`: empty sequence field");
    Ok(CorpusName {
        identity,
        camera,
        sequence: seq.to_string(),
    })
}

/// One row of the explicit CSV index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRow {
    pub image_id: String,
    pub identity: u32,
    pub camera: u32,
    pub width: u32,
    pub height: u32,
    pub path: String,
}

/// Parse a CSV index with header `image_id,identity,camera,width,height,path`.
pub fn parse_index<R: Read>(reader: R) -> Result<Vec<ImageRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["image_id", "identity", "camera", "width", "height", "path"];
    ensure!(
        headers.iter().eq(expected.iter().copied()),
        "index header must be `{}`, found `{}`",
        expected.join(","),
        headers.iter().collect::<Vec<_>>().join(",")
    );
    let mut out = Vec::new();
    for row in rdr.deserialize::<IndexRow>() {
        let row = row?;
        ensure!(
            row.width > 0 && row.height > 0,
            "index row {}: zero image dimension",
            row.image_id
        );
        ensure!(!row.image_id.is_empty(), "index row with empty image_id");
        out.push(ImageRecord::original(
            row.image_id,
            row.identity,
            row.camera,
            row.width,
            row.height,
            row.path,
        ));
    }
    Ok(out)
}

/// Read the records of a corpus directory named by the Market-1501
/// convention. Files that are not images are ignored; image files whose
/// names do not parse are an error. Records are sorted by file name.
pub fn scan_corpus(dir: &Path) -> Result<Vec<ImageRecord>> {
    let mut names: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|path| {
            let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let parsed = parse_corpus_name(file_name)?;
            let (width, height) = image::image_dimensions(&path).map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            Ok(ImageRecord::original(
                stem,
                parsed.identity,
                parsed.camera,
                width,
                height,
                path.to_string_lossy().into_owned(),
            ))
        })
        .collect()
}

/// Decode an image file to a three-channel `[0, 1]` image.
pub fn load_image(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(Image::from_rgb8(&img.to_rgb8()))
}

/// Load a record's pixels with its degradation applied.
pub fn load_record(record: &ImageRecord, interpolation: Interpolation) -> Result<Image> {
    let img = load_image(Path::new(&record.path))?;
    degrade(&img, record.degradation_scale, interpolation)
}

pub fn save_image(image: &Image, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    image.to_rgb8().save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Parameters of a generated toy corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyCorpusSpec {
    pub identities: u32,
    pub cameras: u32,
    pub images_per_camera: u32,
    pub height: u32,
    pub width: u32,
    /// When set, each image is stored at a random height in this range
    /// (aspect preserved), imitating a real multi-resolution capture.
    pub real_height_range: Option<(u32, u32)>,
}

impl Default for ToyCorpusSpec {
    fn default() -> Self {
        ToyCorpusSpec {
            identities: 24,
            cameras: 2,
            images_per_camera: 4,
            height: 96,
            width: 32,
            real_height_range: None,
        }
    }
}

struct Appearance {
    head: [f32; 3],
    torso: [f32; 3],
    legs: [f32; 3],
    stripe_period: usize,
    stripe_vertical: bool,
    stripe_contrast: f32,
}

fn random_color<R: Rng>(rng: &mut R) -> [f32; 3] {
    [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)]
}

fn render_person<R: Rng>(app: &Appearance, background: [f32; 3], gain: f32, h: usize, w: usize, rng: &mut R) -> Image {
    let mut img = Image::filled(h, w, 3, 0.0);
    let dx = rng.random_range(-(w as f32) / 10.0..=w as f32 / 10.0);
    let dy = rng.random_range(-(h as f32) / 24.0..=h as f32 / 24.0);
    let noise = Normal::new(0.0f32, 0.035).unwrap();
    let (hf, wf) = (h as f32, w as f32);
    let cx = wf / 2.0 + dx;
    for y in 0..h {
        for x in 0..w {
            let (py, px) = (y as f32 - dy, x as f32 + 0.5);
            let v = py / hf;
            let color = if (0.04..0.18).contains(&v) && ((px - cx) / (0.13 * wf)).powi(2) + ((v - 0.11) / 0.07).powi(2) <= 1.0 {
                Some(app.head)
            } else if (0.18..0.56).contains(&v) && (px - cx).abs() <= 0.3 * wf {
                let phase = if app.stripe_vertical { x } else { y };
                let shade = if (phase / app.stripe_period) % 2 == 0 {
                    1.0 + app.stripe_contrast
                } else {
                    1.0 - app.stripe_contrast
                };
                Some(app.torso.map(|c| c * shade))
            } else if (0.56..0.96).contains(&v) && {
                let off = (px - cx).abs();
                (0.04 * wf..=0.24 * wf).contains(&off)
            } {
                Some(app.legs)
            } else {
                None
            };
            let base = color.unwrap_or(background);
            for c in 0..3 {
                *img.at_mut(y, x, c) = (base[c] * gain + noise.sample(rng)).clamp(0.0, 1.0);
            }
        }
    }
    img
}

/// Write a toy corpus of rendered pedestrians to `dir` and return its
/// manifest. Identities differ in clothing colours and stripe texture;
/// cameras differ in background and illumination.
pub fn generate_toy_corpus(dir: &Path, spec: &ToyCorpusSpec, seed: u64) -> Result<DatasetManifest> {
    ensure!(spec.identities >= 1 && spec.cameras >= 1 && spec.images_per_camera >= 1, "toy corpus needs at least one identity, camera and image");
    ensure!(spec.height >= 8 && spec.width >= 4, "toy images must be at least 8x4");
    if let Some((lo, hi)) = spec.real_height_range {
        ensure!(lo >= 4 && lo <= hi && hi <= spec.height, "real height range must satisfy 4 <= lo <= hi <= height");
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w) = (spec.height as usize, spec.width as usize);
    let cameras: Vec<([f32; 3], f32)> = (1..=spec.cameras)
        .map(|c| {
            let mut rng = rng_for(seed, &format!("toy/camera/{c}"));
            let bg = [rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)];
            (bg, rng.random_range(0.85..1.15))
        })
        .collect();
    let mut records = Vec::new();
    for identity in 1..=spec.identities {
        let mut rng = rng_for(seed, &format!("toy/identity/{identity}"));
        let app = Appearance {
            head: random_color(&mut rng),
            torso: random_color(&mut rng),
            legs: random_color(&mut rng),
            stripe_period: rng.random_range(1..=3),
            stripe_vertical: rng.random_bool(0.5),
            stripe_contrast: rng.random_range(0.15..0.35),
        };
        for camera in 1..=spec.cameras {
            let (bg, gain) = cameras[camera as usize - 1];
            for seq in 0..spec.images_per_camera {
                let stem = format!("{identity:04}_c{camera}_{seq:03}");
                let mut img_rng = rng_for(seed, &format!("toy/image/{stem}"));
                let mut img = render_person(&app, bg, gain, h, w, &mut img_rng);
                if let Some((lo, hi)) = spec.real_height_range {
                    let nh = img_rng.random_range(lo..=hi) as usize;
                    let nw = ((nh * w) as f64 / h as f64).round().max(1.0) as usize;
                    img = resize(&img, nh, nw, Interpolation::Bilinear)?;
                }
                let path = dir.join(format!("{stem}.png"));
                save_image(&img, &path)?;
                records.push(ImageRecord::original(
                    stem,
                    identity,
                    camera,
                    img.width as u32,
                    img.height as u32,
                    path.to_string_lossy().into_owned(),
                ));
            }
        }
    }
    let provenance = if spec.real_height_range.is_some() {
        Provenance::Real
    } else {
        Provenance::Synthetic
    };
    Ok(DatasetManifest::new(records, provenance, Interpolation::Bicubic))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_plain_and_market_names() {
        assert_eq!(
            parse_corpus_name("0002_c1s1_000451_03.jpg").unwrap(),
            CorpusName {
                identity: 2,
                camera: 1,
                sequence: "000451_03".into()
            }
        );
        let n = parse_corpus_name("17_3_9.png").unwrap();
        assert_eq!((n.identity, n.camera, n.sequence.as_str()), (17, 3, "9"));
    }

    #[test]
    fn rejects_malformed_names() {
        for bad in ["-1_c1s1_000.jpg", "abc_c1_0.png", "12_c_0.png", "12.png", "12_c1.png", "12_c1_.png", "99999999999_c1_0.png"] {
            assert!(parse_corpus_name(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn index_rows_become_originals() {
        let csv = "image_id,identity,camera,width,height,path\na,1,2,10,20,/a.png\nb,3,1,5,5,/b.png\n";
        let recs = parse_index(csv.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].pixel_count, 200);
        assert!(recs.iter().all(ImageRecord::is_original));
        assert!(parse_index("id,identity\n1,2\n".as_bytes()).is_err());
        assert!(parse_index("image_id,identity,camera,width,height,path\na,1,2,0,20,/a.png\n".as_bytes()).is_err());
    }

    #[test]
    fn toy_corpus_roundtrips_through_directory_scan() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ToyCorpusSpec {
            identities: 3,
            cameras: 2,
            images_per_camera: 2,
            ..Default::default()
        };
        let m = generate_toy_corpus(dir.path(), &spec, 5).unwrap();
        assert_eq!(m.records.len(), 12);
        assert_eq!(m.identity_count, 3);
        let scanned = scan_corpus(dir.path()).unwrap();
        assert_eq!(scanned, m.records);
        let img = load_record(&m.records[0], Interpolation::Bicubic).unwrap();
        assert_eq!((img.height, img.width, img.channels), (96, 32, 3));
    }

    #[test]
    fn real_style_corpus_varies_in_size() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ToyCorpusSpec {
            identities: 2,
            cameras: 2,
            images_per_camera: 3,
            real_height_range: Some((24, 96)),
            ..Default::default()
        };
        let m = generate_toy_corpus(dir.path(), &spec, 1).unwrap();
        assert_eq!(m.provenance, Provenance::Real);
        let sizes: std::collections::BTreeSet<_> = m.records.iter().map(|r| r.pixel_count).collect();
        assert!(sizes.len() > 3);
    }
}
