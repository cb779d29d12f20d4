//! Reader for the RAVEN distribution's per-problem `.npz` archives.

use std::fs::File;
use std::path::Path;

use ndarray::{ArrayD, Axis};
use ndarray_npy::NpzReader;

use crate::error::{Error, Result};
use crate::problem::{Cell, Configuration, RpmProblem, CANDIDATES, CONTEXT_CELLS};

const PANELS: usize = CONTEXT_CELLS + CANDIDATES;

fn read_target(npz: &mut NpzReader<File>) -> Result<usize> {
    let fail = |m: String| Error::format("target", m);
    let value = if let Ok(a) = npz.by_name::<_, ndarray::IxDyn>("target") {
        let a: ArrayD<i64> = a;
        a.iter().next().copied()
    } else if let Ok(a) = npz.by_name::<_, ndarray::IxDyn>("target") {
        let a: ArrayD<i32> = a;
        a.iter().next().map(|v| *v as i64)
    } else {
        let a: ArrayD<u8> = npz
            .by_name("target")
            .map_err(|e| fail(format!("missing or unreadable: {e}")))?;
        a.iter().next().map(|v| *v as i64)
    };
    let value = value.ok_or_else(|| fail("empty array".into()))?;
    usize::try_from(value)
        .ok()
        .filter(|v| *v < CANDIDATES)
        .ok_or_else(|| fail(format!("{value} outside [0,7]")))
}

/// Load one RAVEN problem; the configuration comes from the parent directory name.
pub fn load_raven_archive(path: &Path) -> Result<RpmProblem> {
    let configuration = path
        .parent()
        .and_then(Path::file_name)
        .and_then(|d| d.to_str())
        .and_then(Configuration::from_raven_dir)
        .ok_or_else(|| {
            Error::format(
                "configuration",
                format!("cannot infer a configuration from the directory of {}", path.display()),
            )
        })?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut npz = NpzReader::new(file).map_err(|e| Error::format("archive", e.to_string()))?;
    let image: ArrayD<u8> = npz
        .by_name("image")
        .map_err(|e| Error::format("image", format!("missing or unreadable: {e}")))?;
    let shape = image.shape().to_vec();
    if shape.len() != 3 || shape[0] != PANELS || shape[1] != shape[2] {
        return Err(Error::format(
            "image",
            format!("expected a 16 x H x H stack, got {shape:?}"),
        ));
    }
    let answer = read_target(&mut npz)?;
    let side = shape[1];
    let mut cells = image
        .axis_iter(Axis(0))
        .map(|panel| Cell::new(side, panel.iter().copied().collect()))
        .collect::<Result<Vec<_>>>()?;
    let candidates = cells.split_off(CONTEXT_CELLS);
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    RpmProblem::new(id, cells, candidates, configuration)?.with_answer(answer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr0, Array3};
    use ndarray_npy::NpzWriter;

    fn write_archive(dir: &Path, panels: usize, target: i64) -> std::path::PathBuf {
        let sub = dir.join("center_single");
        std::fs::create_dir_all(&sub).unwrap();
        let path = sub.join("RAVEN_7_test.npz");
        let stack = Array3::from_shape_fn((panels, 160, 160), |(p, y, x)| ((p * 13 + y + x) % 256) as u8);
        let mut npz = NpzWriter::new(File::create(&path).unwrap());
        npz.add_array("image", &stack).unwrap();
        npz.add_array("target", &arr0(target)).unwrap();
        npz.finish().unwrap();
        path
    }

    #[test]
    fn reads_a_valid_archive() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_archive(dir.path(), 16, 2);
        let p = load_raven_archive(&path).unwrap();
        assert_eq!(p.answer(), Some(2));
        assert_eq!(p.configuration(), Configuration::Center);
        assert_eq!(p.context().len(), 8);
        assert_eq!(p.candidates().len(), 8);
        assert_eq!(p.resolution(), 160);
        assert_eq!(p.candidates()[0].get(1, 0), (8 * 13 + 1) as u8);
        assert_eq!(p.id(), "RAVEN_7_test");
    }

    #[test]
    fn wrong_panel_count_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_archive(dir.path(), 15, 2);
        match load_raven_archive(&path) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "image"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn target_out_of_range_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_archive(dir.path(), 16, 9);
        match load_raven_archive(&path) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "target"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_directory_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_archive(dir.path(), 16, 1);
        let moved = dir.path().join("elsewhere.npz");
        std::fs::rename(&path, &moved).unwrap();
        assert!(load_raven_archive(&moved).is_err());
    }
}
