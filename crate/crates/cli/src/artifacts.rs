//! On-disk layout shared by the commands: result tables as CSV, observation
//! bundles as one directory per vehicle, meshes as polygon text and images
//! as binary PPM. Floats are written with the shortest round-tripping
//! representation, so read-back is exact.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use carfit::energy::ModelVariant;
use carfit::mesh::SurfaceMesh;
use carfit::observer::{
    read_heatmaps, write_heatmaps, DetectionBox, ObservationBundle, TypeDistribution,
    ViewpointDistribution, VIEW_BINS,
};
use carfit::scene::GroundPlane;
use carfit::{VehicleState, VehicleType};
use nalgebra::{Point3, Unit, Vector3};

#[derive(Debug, Clone, PartialEq)]
pub struct TruthRow {
    pub id: usize,
    pub vtype: VehicleType,
    pub state: VehicleState,
}

#[derive(Debug, Clone)]
pub struct FitRow {
    pub id: usize,
    pub variant: ModelVariant,
    pub state: VehicleState,
    /// Energy decomposition: points, keypoints, wireframe, position,
    /// orientation, shape, total.
    pub energy: [f64; 7],
    pub evaluations: usize,
}

fn state_cells(state: &VehicleState) -> String {
    let mut cells = format!("{},{},{}", state.t.x, state.t.y, state.theta_deg);
    for g in &state.gamma {
        cells.push(',');
        cells.push_str(&g.to_string());
    }
    cells
}

fn gamma_header(n_gamma: usize) -> String {
    (0..n_gamma).map(|i| format!(",g{i}")).collect()
}

/// Splits a state out of `cells[offset..offset + 3 + n_gamma]`.
fn parse_state(cells: &[&str], offset: usize, n_gamma: usize) -> Result<VehicleState> {
    if cells.len() < offset + 3 + n_gamma {
        bail!("row has {} cells, expected {}", cells.len(), offset + 3 + n_gamma);
    }
    let num = |i: usize| -> Result<f64> {
        cells[i]
            .trim()
            .parse::<f64>()
            .with_context(|| format!("bad number {:?}", cells[i]))
    };
    let mut gamma = Vec::with_capacity(n_gamma);
    for i in 0..n_gamma {
        gamma.push(num(offset + 3 + i)?);
    }
    Ok(VehicleState::new(
        nalgebra::Vector2::new(num(offset)?, num(offset + 1)?),
        num(offset + 2)?,
        gamma,
    ))
}

fn gamma_count(header: &str) -> usize {
    header.split(',').filter(|c| c.trim().starts_with('g')).count()
}

pub fn write_truth(path: &Path, rows: &[TruthRow], n_gamma: usize) -> Result<()> {
    let mut text = format!("id,type,x_m,y_m,theta_deg{}\n", gamma_header(n_gamma));
    for row in rows {
        text.push_str(&format!(
            "{},{},{}\n",
            row.id,
            row.vtype.name(),
            state_cells(&row.state)
        ));
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRow>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().context("empty truth table")?;
    let n_gamma = gamma_count(header);
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() < 2 {
            bail!("truth row too short: {line:?}");
        }
        rows.push(TruthRow {
            id: cells[0].trim().parse().with_context(|| format!("bad id {:?}", cells[0]))?,
            vtype: cells[1]
                .trim()
                .parse()
                .map_err(|e: carfit::Error| anyhow::Error::new(e))?,
            state: parse_state(&cells, 2, n_gamma)?,
        });
    }
    Ok(rows)
}

pub fn write_fits(path: &Path, rows: &[FitRow], n_gamma: usize) -> Result<()> {
    let mut text = format!(
        "id,variant,x_m,y_m,theta_deg{},e_points,e_keypoints,e_wireframe,e_position,e_orientation,e_shape,e_total,evaluations\n",
        gamma_header(n_gamma)
    );
    for row in rows {
        let energy: Vec<String> = row.energy.iter().map(|v| v.to_string()).collect();
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            row.id,
            row.variant.name(),
            state_cells(&row.state),
            energy.join(","),
            row.evaluations
        ));
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_fits(path: &Path) -> Result<Vec<FitRow>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().context("empty fits table")?;
    let n_gamma = gamma_count(header);
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let cells: Vec<&str> = line.split(',').collect();
        let expect = 2 + 3 + n_gamma + 7 + 1;
        if cells.len() != expect {
            bail!("fits row has {} cells, expected {expect}: {line:?}", cells.len());
        }
        let mut energy = [0.0f64; 7];
        for (k, slot) in energy.iter_mut().enumerate() {
            let cell = cells[5 + n_gamma + k].trim();
            *slot = cell.parse().with_context(|| format!("bad energy {cell:?}"))?;
        }
        rows.push(FitRow {
            id: cells[0].trim().parse().with_context(|| format!("bad id {:?}", cells[0]))?,
            variant: cells[1]
                .trim()
                .parse()
                .map_err(|e: carfit::Error| anyhow::Error::new(e))?,
            state: parse_state(&cells, 2, n_gamma)?,
            energy,
            evaluations: cells[expect - 1].trim().parse().context("bad evaluation count")?,
        });
    }
    Ok(rows)
}

pub fn write_plane(path: &Path, plane: &GroundPlane) -> Result<()> {
    let n = plane.normal.into_inner();
    fs::write(path, format!("{} {} {} {}\n", n.x, n.y, n.z, plane.offset))
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_plane(path: &Path) -> Result<GroundPlane> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let nums: Vec<f64> = text
        .split_whitespace()
        .map(|c| c.parse::<f64>().with_context(|| format!("bad plane value {c:?}")))
        .collect::<Result<_>>()?;
    if nums.len() != 4 {
        bail!("plane file must hold normal xyz and offset, got {} values", nums.len());
    }
    Ok(GroundPlane {
        normal: Unit::new_normalize(Vector3::new(nums[0], nums[1], nums[2])),
        offset: nums[3],
    })
}

/// Directory of one vehicle's observations inside a scene.
pub fn bundle_dir(scene: &Path, id: usize) -> PathBuf {
    scene.join("obs").join(format!("v{id:03}"))
}

pub fn write_bundle(dir: &Path, bundle: &ObservationBundle) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut points = String::new();
    for p in &bundle.points {
        points.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    fs::write(dir.join("points.txt"), points)?;

    let mut boxes = String::new();
    for b in &bundle.boxes {
        boxes.push_str(&format!("{} {} {} {}\n", b.x0, b.y0, b.x1, b.y1));
    }
    fs::write(dir.join("boxes.txt"), boxes)?;

    for (maps, name) in [
        (&bundle.keypoint_maps, "kp"),
        (&bundle.wireframe_maps, "wf"),
    ] {
        write_heatmaps(&dir.join(format!("{name}_left.hmap")), &maps[0])?;
        write_heatmaps(&dir.join(format!("{name}_right.hmap")), &maps[1])?;
    }

    let viewpoint: String = bundle.viewpoint.probs.iter().map(|p| format!("{p}\n")).collect();
    fs::write(dir.join("viewpoint.txt"), viewpoint)?;

    let mut types = String::new();
    for t in VehicleType::ALL {
        types.push_str(&format!("{} {}\n", t.name(), bundle.types.prob(t)));
    }
    fs::write(dir.join("type.txt"), types)?;
    Ok(())
}

pub fn read_bundle(dir: &Path) -> Result<ObservationBundle> {
    let read = |name: &str| -> Result<String> {
        fs::read_to_string(dir.join(name))
            .with_context(|| format!("reading {}/{name}", dir.display()))
    };

    let mut points = Vec::new();
    for line in read("points.txt")?.lines().filter(|l| !l.trim().is_empty()) {
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(|c| c.parse::<f64>().with_context(|| format!("bad point value {c:?}")))
            .collect::<Result<_>>()?;
        if nums.len() != 3 {
            bail!("point line must hold three values: {line:?}");
        }
        points.push(Point3::new(nums[0], nums[1], nums[2]));
    }

    let mut boxes = Vec::new();
    for line in read("boxes.txt")?.lines().filter(|l| !l.trim().is_empty()) {
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(|c| c.parse::<f64>().with_context(|| format!("bad box value {c:?}")))
            .collect::<Result<_>>()?;
        if nums.len() != 4 {
            bail!("box line must hold four values: {line:?}");
        }
        boxes.push(DetectionBox { x0: nums[0], y0: nums[1], x1: nums[2], y1: nums[3] });
    }
    let [left, right]: [DetectionBox; 2] = boxes
        .try_into()
        .map_err(|_| anyhow::anyhow!("boxes.txt must hold exactly two boxes"))?;

    let keypoint_maps = [
        read_heatmaps(&dir.join("kp_left.hmap"))?,
        read_heatmaps(&dir.join("kp_right.hmap"))?,
    ];
    let wireframe_maps = [
        read_heatmaps(&dir.join("wf_left.hmap"))?,
        read_heatmaps(&dir.join("wf_right.hmap"))?,
    ];

    let probs: Vec<f64> = read("viewpoint.txt")?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse::<f64>().with_context(|| format!("bad probability {l:?}")))
        .collect::<Result<_>>()?;
    if probs.len() != VIEW_BINS {
        bail!("viewpoint.txt holds {} bins, expected {VIEW_BINS}", probs.len());
    }

    let mut type_probs = [0.0f64; VehicleType::COUNT];
    for line in read("type.txt")?.lines().filter(|l| !l.trim().is_empty()) {
        let (name, prob) = line
            .trim()
            .split_once(' ')
            .with_context(|| format!("bad type line {line:?}"))?;
        let t: VehicleType = name.parse().map_err(|e: carfit::Error| anyhow::Error::new(e))?;
        type_probs[t.index()] = prob.trim().parse().with_context(|| format!("bad probability {prob:?}"))?;
    }

    Ok(ObservationBundle {
        points,
        boxes: [left, right],
        keypoint_maps,
        wireframe_maps,
        viewpoint: ViewpointDistribution { probs },
        types: TypeDistribution { probs: type_probs },
    })
}

/// Binary PPM (P6) image from packed RGB bytes.
pub fn write_ppm(path: &Path, width: u32, height: u32, rgb: &[u8]) -> Result<()> {
    if rgb.len() != (width * height * 3) as usize {
        bail!("image buffer is {} bytes, expected {}", rgb.len(), width * height * 3);
    }
    let mut bytes = format!("P6\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(rgb);
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// ASCII mesh text: `v x y z` vertex lines, then 1-based `f a b c` faces.
pub fn write_obj(path: &Path, mesh: &SurfaceMesh) -> Result<()> {
    let mut text = String::new();
    for v in &mesh.vertices {
        text.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for t in &mesh.triangles {
        text.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use carfit::observer::Heatmap;
    use nalgebra::Vector2;

    fn state(x: f64, theta: f64) -> VehicleState {
        VehicleState::new(Vector2::new(x, -0.25), theta, vec![0.5, -1.25, 0.0625])
    }

    #[test]
    fn truth_and_fits_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let truth = vec![
            TruthRow { id: 0, vtype: VehicleType::Sedan, state: state(11.125, 40.5) },
            TruthRow { id: 1, vtype: VehicleType::Van, state: state(14.0, 285.0) },
        ];
        let path = dir.path().join("truth.csv");
        write_truth(&path, &truth, 3).unwrap();
        assert_eq!(read_truth(&path).unwrap(), truth);

        let fits = vec![FitRow {
            id: 1,
            variant: ModelVariant::BaseS,
            state: state(13.875, 283.25),
            energy: [0.5, -1.5, -0.25, 0.0, 1.75, 0.125, 0.625],
            evaluations: 2200,
        }];
        let path = dir.path().join("fits.csv");
        write_fits(&path, &fits, 3).unwrap();
        let back = read_fits(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].variant, ModelVariant::BaseS);
        assert_eq!(back[0].state, fits[0].state);
        assert_eq!(back[0].energy, fits[0].energy);
        assert_eq!(back[0].evaluations, 2200);
    }

    #[test]
    fn malformed_tables_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.csv");
        fs::write(&path, "id,type,x_m,y_m,theta_deg,g0\n0,hovercraft,1,2,3,4\n").unwrap();
        assert!(read_truth(&path).is_err());
        fs::write(&path, "id,type,x_m,y_m,theta_deg,g0\n0,sedan,1,2\n").unwrap();
        assert!(read_truth(&path).is_err());
    }

    #[test]
    fn plane_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plane.txt");
        let plane = GroundPlane {
            normal: Unit::new_normalize(Vector3::new(0.0, -1.0, 0.0)),
            offset: -1.65,
        };
        write_plane(&path, &plane).unwrap();
        let back = read_plane(&path).unwrap();
        assert_eq!(back.normal.into_inner(), plane.normal.into_inner());
        assert_eq!(back.offset, plane.offset);
    }

    #[test]
    fn bundle_directories_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut kp = Heatmap::zeros(8, 8);
        kp.set(3, 4, 0.75);
        let wf = Heatmap::zeros(8, 8);
        let bundle = ObservationBundle {
            points: vec![Point3::new(1.0, 2.0, 12.5), Point3::new(-0.5, 1.5, 9.0)],
            boxes: [
                DetectionBox { x0: 10.0, y0: 20.0, x1: 110.0, y1: 120.0 },
                DetectionBox { x0: 8.0, y0: 20.0, x1: 108.0, y1: 120.0 },
            ],
            keypoint_maps: [vec![kp.clone()], vec![kp.clone()]],
            wireframe_maps: [vec![wf.clone()], vec![wf.clone()]],
            viewpoint: ViewpointDistribution::wrapped_gaussian(120.0, 15.0, VIEW_BINS),
            types: TypeDistribution::peaked(VehicleType::Truck, 0.3),
        };
        write_bundle(dir.path(), &bundle).unwrap();
        let back = read_bundle(dir.path()).unwrap();
        assert_eq!(back.points, bundle.points);
        assert_eq!(back.boxes[0].x0, 10.0);
        assert_eq!(back.boxes[1].x0, 8.0);
        assert_eq!(back.keypoint_maps[0][0].get(3, 4), 0.75);
        assert_eq!(back.viewpoint.probs, bundle.viewpoint.probs);
        assert_eq!(back.types.probs, bundle.types.probs);
    }

    #[test]
    fn images_and_meshes_have_the_promised_layout() {
        let dir = tempfile::tempdir().unwrap();
        let ppm = dir.path().join("o.ppm");
        write_ppm(&ppm, 4, 2, &[7u8; 24]).unwrap();
        let bytes = fs::read(&ppm).unwrap();
        assert!(bytes.starts_with(b"P6\n4 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 24);
        assert!(write_ppm(&ppm, 4, 2, &[0u8; 10]).is_err());

        let obj = dir.path().join("m.obj");
        let mesh = SurfaceMesh::new(
            vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        );
        write_obj(&obj, &mesh).unwrap();
        let text = fs::read_to_string(&obj).unwrap();
        assert_eq!(text, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
    }
}
