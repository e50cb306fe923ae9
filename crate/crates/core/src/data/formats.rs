//! Dataset ingestion and persistence.
//!
//! Two on-disk formats are supported:
//!
//! - the plain matrix file (canonical interchange format): UTF-8, first line
//!   `id,<cat1>,...,<catM>`, then one `image_id,0|1,...` line per image;
//! - a COCO-style JSON adapter reading the `images`, `annotations`
//!   (`image_id`, `category_id`), and `categories` arrays.
//!
//! Thing/stuff annotation files for the same image set load separately and
//! combine via [`crate::data::merge_label_sources`]. Note that datasets
//! published with different train/test splits of the same image pool must be
//! remapped to a common split *before* ingestion; this adapter requires both
//! files to already cover identical image-id sets.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::ImageReader;
use ndarray::{Array2, Array3};
use serde::Deserialize;

use crate::data::{DatasetItem, ImageSource, LabeledDataset, SplitTag};
use crate::error::{Error, Result};

/// Format descriptor + path for [`load_annotations`].
#[derive(Debug, Clone)]
pub enum AnnotationSource {
    PlainMatrix {
        path: PathBuf,
        /// Directory with one `<image_id>.png` per item. Without it the
        /// dataset is label-only.
        images_dir: Option<PathBuf>,
    },
    CocoJson {
        path: PathBuf,
        images_dir: Option<PathBuf>,
    },
}

/// Loads a dataset from one annotation source. Item order is lexicographic
/// by image id regardless of the order in the file.
pub fn load_annotations(source: &AnnotationSource, split_tag: SplitTag) -> Result<LabeledDataset> {
    match source {
        AnnotationSource::PlainMatrix { path, images_dir } => {
            read_matrix_file(path, images_dir.as_deref(), split_tag)
        }
        AnnotationSource::CocoJson { path, images_dir } => {
            read_coco_json(path, images_dir.as_deref(), split_tag)
        }
    }
}

fn image_source_for(id: &str, images_dir: Option<&Path>) -> ImageSource {
    match images_dir {
        Some(dir) => ImageSource::file(dir.join(format!("{id}.png"))),
        None => ImageSource::None,
    }
}

/// Parses the plain matrix format.
pub fn read_matrix_file(
    path: &Path,
    images_dir: Option<&Path>,
    split_tag: SplitTag,
) -> Result<LabeledDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::data_file(path, "empty matrix file"))?;
    let mut fields = header.split(',');
    let id_field = fields.next().unwrap_or("");
    if id_field != "id" {
        return Err(Error::data_file(
            path,
            format!("header must start with 'id', got {id_field:?}"),
        ));
    }
    let category_names: Vec<String> = fields.map(|s| s.to_owned()).collect();
    if category_names.is_empty() {
        return Err(Error::data_file(path, "header lists no categories"));
    }
    let m = category_names.len();

    let mut items = Vec::new();
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let image_id = fields
            .next()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| {
                Error::data_file(path, format!("line {}: missing image id", lineno + 1))
            })?
            .to_owned();
        let mut row = Vec::with_capacity(m);
        for field in fields {
            match field {
                "0" => row.push(0u8),
                "1" => row.push(1u8),
                other => {
                    return Err(Error::data_file(
                        path,
                        format!("line {} ({image_id}): invalid label {other:?}", lineno + 1),
                    ))
                }
            }
        }
        if row.len() != m {
            return Err(Error::data_file(
                path,
                format!(
                    "line {} ({image_id}): expected {m} labels, got {}",
                    lineno + 1,
                    row.len()
                ),
            ));
        }
        items.push(DatasetItem {
            image: image_source_for(&image_id, images_dir),
            image_id,
        });
        rows.push(row);
    }

    let labels = Array2::from_shape_vec((rows.len(), m), rows.into_iter().flatten().collect())
        .expect("row lengths verified");
    LabeledDataset::new(items, labels, category_names, split_tag)
}

/// Writes the plain matrix format. Inverse of [`read_matrix_file`].
pub fn write_matrix_file(d: &LabeledDataset, path: &Path) -> Result<()> {
    for name in d.category_names() {
        if name.contains(',') || name.contains('\n') {
            return Err(Error::Data(format!(
                "category name {name:?} cannot be stored in the matrix format"
            )));
        }
    }
    let mut out = String::new();
    out.push_str("id");
    for name in d.category_names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for i in 0..d.len() {
        if d.image_id(i).contains(',') || d.image_id(i).contains('\n') {
            return Err(Error::Data(format!(
                "image id {:?} cannot be stored in the matrix format",
                d.image_id(i)
            )));
        }
        out.push_str(d.image_id(i));
        for c in 0..d.num_categories() {
            out.push(',');
            out.push(if d.label(i, c) == 1 { '1' } else { '0' });
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Debug, Deserialize)]
struct CocoImage {
    id: i64,
    #[serde(default)]
    file_name: Option<String>,
}

#[derive(Debug, Deserialize)]
struct CocoAnnotation {
    image_id: i64,
    category_id: i64,
}

#[derive(Debug, Deserialize)]
struct CocoCategory {
    id: i64,
    name: String,
}

/// Reads a COCO-style JSON annotation file into a label matrix.
///
/// Numeric image ids become zero-padded 12-digit strings (so lexicographic
/// item order equals numeric order) unless the record carries a `file_name`,
/// which is then used verbatim (minus extension) as the image id.
pub fn read_coco_json(
    path: &Path,
    images_dir: Option<&Path>,
    split_tag: SplitTag,
) -> Result<LabeledDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CocoFile = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_owned(),
        source: e,
    })?;

    let mut categories: Vec<(i64, String)> = file
        .categories
        .into_iter()
        .map(|c| (c.id, c.name))
        .collect();
    categories.sort_by_key(|(id, _)| *id);
    let col_of: BTreeMap<i64, usize> = categories
        .iter()
        .enumerate()
        .map(|(col, (id, _))| (*id, col))
        .collect();
    let category_names: Vec<String> = categories.into_iter().map(|(_, name)| name).collect();

    let mut row_of: BTreeMap<i64, usize> = BTreeMap::new();
    let mut items = Vec::with_capacity(file.images.len());
    for (row, img) in file.images.iter().enumerate() {
        let image_id = match &img.file_name {
            Some(name) => name
                .rsplit_once('.')
                .map(|(stem, _)| stem.to_owned())
                .unwrap_or_else(|| name.clone()),
            None => format!("{:012}", img.id),
        };
        if row_of.insert(img.id, row).is_some() {
            return Err(Error::data_file(
                path,
                format!("duplicate image record id {}", img.id),
            ));
        }
        items.push(DatasetItem {
            image: image_source_for(&image_id, images_dir),
            image_id,
        });
    }

    let mut labels = Array2::zeros((items.len(), category_names.len()));
    for ann in &file.annotations {
        let row = *row_of.get(&ann.image_id).ok_or_else(|| {
            Error::data_file(
                path,
                format!("annotation references unknown image id {}", ann.image_id),
            )
        })?;
        let col = *col_of.get(&ann.category_id).ok_or_else(|| {
            Error::data_file(
                path,
                format!(
                    "annotation for image {} references unknown category id {}",
                    ann.image_id, ann.category_id
                ),
            )
        })?;
        labels[[row, col]] = 1;
    }

    LabeledDataset::new(items, labels, category_names, split_tag)
}

/// Decodes a PNG into a CHW float array in [0, 1].
pub fn read_image(path: &Path) -> Result<Array3<f64>> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::data_file(path, format!("image decode failed: {e}")))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut arr = Array3::zeros((3, h, w));
    for (x, y, pixel) in img.enumerate_pixels() {
        for ch in 0..3 {
            arr[[ch, y as usize, x as usize]] = pixel.0[ch] as f64 / 255.0;
        }
    }
    Ok(arr)
}

/// Encodes a CHW float array in [0, 1] as an RGB PNG.
pub fn write_image(arr: &Array3<f64>, path: &Path) -> Result<()> {
    let (c, h, w) = arr.dim();
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                (arr[[0, y, x]].clamp(0.0, 1.0) * 255.0).round() as u8,
                (arr[[1, y, x]].clamp(0.0, 1.0) * 255.0).round() as u8,
                (arr[[2, y, x]].clamp(0.0, 1.0) * 255.0).round() as u8,
            ];
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    img.save(path)
        .map_err(|e| Error::data_file(path, format!("image encode failed: {e}")))
}

/// Persists a dataset as a directory of PNGs plus one matrix file
/// (`labels.csv`). Items without pixel payloads only appear in the matrix.
pub fn save_dataset(d: &LabeledDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for i in 0..d.len() {
        if matches!(d.items()[i].image, ImageSource::None) {
            continue;
        }
        let img = d.load_image(i)?;
        write_image(&img, &dir.join(format!("{}.png", d.image_id(i))))?;
    }
    write_matrix_file(d, &dir.join("labels.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        (dir, path)
    }

    #[test]
    fn plain_matrix_roundtrip() {
        let (_dir, path) = write_tmp("id,cat_a,cat_b\nimg2,0,1\nimg0,1,0\nimg1,1,1\n");
        let d = read_matrix_file(&path, None, SplitTag::Train).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.num_categories(), 2);
        assert_eq!(d.image_id(0), "img0");
        assert_eq!(d.label(0, 0), 1);
        assert_eq!(d.label(2, 1), 1);

        let out = path.with_extension("out.csv");
        write_matrix_file(&d, &out).unwrap();
        let d2 = read_matrix_file(&out, None, SplitTag::Train).unwrap();
        assert_eq!(d.labels(), d2.labels());
        assert_eq!(d.category_names(), d2.category_names());
    }

    #[test]
    fn plain_matrix_names_offending_record() {
        let (_dir, path) = write_tmp("id,a,b\nok,1,0\nbad,1,2\n");
        let err = read_matrix_file(&path, None, SplitTag::Train).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad") && msg.contains("2"), "{msg}");
    }

    #[test]
    fn coco_json_marks_annotated_categories() {
        let (_dir, path) = write_tmp(
            r#"{
              "images": [{"id": 9}, {"id": 12}],
              "annotations": [
                {"image_id": 9, "category_id": 1},
                {"image_id": 9, "category_id": 41},
                {"image_id": 12, "category_id": 41}
              ],
              "categories": [
                {"id": 1, "name": "person"},
                {"id": 41, "name": "skateboard"},
                {"id": 47, "name": "cup"}
              ]
            }"#,
        );
        let d = read_coco_json(&path, None, SplitTag::Test).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.category_names(), &["person", "skateboard", "cup"]);
        let row = d.index_of("000000000009").unwrap();
        assert_eq!(d.labels().row(row).to_vec(), vec![1, 1, 0]);
        let row = d.index_of("000000000012").unwrap();
        assert_eq!(d.labels().row(row).to_vec(), vec![0, 1, 0]);
    }

    #[test]
    fn coco_json_rejects_unknown_category() {
        let (_dir, path) = write_tmp(
            r#"{
              "images": [{"id": 1}],
              "annotations": [{"image_id": 1, "category_id": 99}],
              "categories": [{"id": 1, "name": "person"}, {"id": 2, "name": "cup"}]
            }"#,
        );
        let err = read_coco_json(&path, None, SplitTag::Test).unwrap_err();
        assert!(err.to_string().contains("unknown category id 99"));
    }

    #[test]
    fn corrupt_json_is_a_parse_error() {
        let (_dir, path) = write_tmp("{ not json");
        assert!(read_coco_json(&path, None, SplitTag::Test).is_err());
    }

    #[test]
    fn image_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut arr = Array3::zeros((3, 4, 5));
        for y in 0..4 {
            for x in 0..5 {
                arr[[0, y, x]] = (x as f64) / 4.0;
                arr[[1, y, x]] = (y as f64) / 3.0;
            }
        }
        let path = dir.path().join("img.png");
        write_image(&arr, &path).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back.dim(), (3, 4, 5));
        for (a, b) in arr.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1.0 / 255.0 + 1e-9);
        }
    }
}
