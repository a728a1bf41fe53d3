//! Mask-to-box conversion.
//!
//! A label mask is split into one binary grid per class; every grid is traced
//! with Suzuki-Abe border following (8-connected foreground, 4-connected
//! background) and each outer border yields the axis-aligned box spanned by
//! its points.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-pixel class annotation; class id 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    class_ids: Vec<u32>,
    class_names: BTreeMap<u32, String>,
}

impl LabelMask {
    pub fn new(
        width: usize,
        height: usize,
        class_ids: Vec<u32>,
        class_names: BTreeMap<u32, String>,
    ) -> Result<Self> {
        if class_ids.len() != width * height {
            return Err(Error::InvalidMask(format!(
                "grid has {} cells, expected {width}x{height}",
                class_ids.len()
            )));
        }
        if let Some(id) = class_ids
            .iter()
            .find(|&&id| id != 0 && !class_names.contains_key(&id))
        {
            return Err(Error::InvalidMask(format!("class id {id} has no name")));
        }
        Ok(Self {
            width,
            height,
            class_ids,
            class_names,
        })
    }

    /// Load an 8-bit single-channel PNG or PGM whose pixel values are class ids.
    pub fn from_image_file(path: &Path, class_names: BTreeMap<u32, String>) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::ingest(path, e.to_string()))?;
        let gray = match img {
            image::DynamicImage::ImageLuma8(g) => g,
            other => {
                return Err(Error::ingest(
                    path,
                    format!("expected 8-bit single-channel mask, got {:?}", other.color()),
                ))
            }
        };
        let (w, h) = gray.dimensions();
        let ids = gray.into_raw().into_iter().map(u32::from).collect();
        Self::new(w as usize, h as usize, ids, class_names)
            .map_err(|e| Error::ingest(path, e.to_string()))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn class_names(&self) -> &BTreeMap<u32, String> {
        &self.class_names
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.class_ids[y * self.width + x]
    }

    /// Nonzero class ids that actually occur in the grid, ascending.
    pub fn present_classes(&self) -> Vec<u32> {
        self.class_ids
            .iter()
            .copied()
            .filter(|&c| c != 0)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryGrid {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BinaryGrid {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "grid size mismatch");
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Point {
    pub x: u32,
    pub y: u32,
}

impl Point {
    pub fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    pub fn is_8_neighbor(&self, other: &Point) -> bool {
        let dx = self.x.abs_diff(other.x);
        let dy = self.y.abs_diff(other.y);
        dx <= 1 && dy <= 1 && (dx, dy) != (0, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContourKind {
    Outer,
    Hole,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contour {
    pub points: Vec<Point>,
    pub kind: ContourKind,
    /// Index of the enclosing border in the same trace result.
    pub parent: Option<usize>,
}

/// Axis-aligned box with inclusive pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub class_id: u32,
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BBox {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }
}

/// JSON shape of an extracted box: `{class, x_min, y_min, x_max, y_max}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub class: String,
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BoxRecord {
    pub fn from_box(b: &BBox, class_names: &BTreeMap<u32, String>) -> Self {
        Self {
            class: class_names
                .get(&b.class_id)
                .cloned()
                .unwrap_or_else(|| b.class_id.to_string()),
            x_min: b.x_min,
            y_min: b.y_min,
            x_max: b.x_max,
            y_max: b.y_max,
        }
    }
}

pub fn binarize(mask: &LabelMask, class_id: u32) -> Result<BinaryGrid> {
    if !mask.class_names.contains_key(&class_id) {
        return Err(Error::InvalidClass(class_id));
    }
    let bits = mask.class_ids.iter().map(|&c| c == class_id).collect();
    Ok(BinaryGrid::new(mask.width, mask.height, bits))
}

// Neighbour offsets in clockwise order on screen (y grows downward),
// starting east.
const DIRS: [(i64, i64); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];
const EAST: usize = 0;

fn dir_index(dx: i64, dy: i64) -> usize {
    DIRS.iter()
        .position(|&d| d == (dx, dy))
        .expect("offset between 8-neighbours")
}

/// Working copy of a grid with a one-pixel zero frame.
struct Labels {
    stride: usize,
    cells: Vec<i64>,
}

impl Labels {
    fn new(grid: &BinaryGrid) -> Self {
        let stride = grid.width + 2;
        let mut cells = vec![0i64; stride * (grid.height + 2)];
        for y in 0..grid.height {
            for x in 0..grid.width {
                if grid.get(x, y) {
                    cells[(y + 1) * stride + x + 1] = 1;
                }
            }
        }
        Self { stride, cells }
    }

    fn at(&self, x: i64, y: i64) -> i64 {
        self.cells[y as usize * self.stride + x as usize]
    }

    fn set(&mut self, x: i64, y: i64, v: i64) {
        self.cells[y as usize * self.stride + x as usize] = v;
    }
}

/// Trace every border of the grid in raster discovery order.
///
/// Each 8-connected foreground component produces exactly one outer border;
/// each 4-connected background region enclosed by a component produces one
/// hole border.
pub fn trace_borders(grid: &BinaryGrid) -> Vec<Contour> {
    let mut f = Labels::new(grid);
    let (w, h) = (grid.width as i64, grid.height as i64);
    let mut contours: Vec<Contour> = Vec::new();
    let mut nbd: i64 = 1;

    for y in 1..=h {
        let mut lnbd: i64 = 1;
        for x in 1..=w {
            let v = f.at(x, y);
            if v == 0 {
                continue;
            }
            let start = if v == 1 && f.at(x - 1, y) == 0 {
                Some(((x - 1, y), ContourKind::Outer))
            } else if v >= 1 && f.at(x + 1, y) == 0 {
                if v > 1 {
                    lnbd = v;
                }
                Some(((x + 1, y), ContourKind::Hole))
            } else {
                None
            };

            if let Some((from, kind)) = start {
                nbd += 1;
                // Border numbers start at 2; contour k has number k + 2.
                let parent = if lnbd >= 2 {
                    let prev = (lnbd - 2) as usize;
                    if (kind == ContourKind::Outer) ^ (contours[prev].kind == ContourKind::Outer) {
                        Some(prev)
                    } else {
                        contours[prev].parent
                    }
                } else {
                    None
                };
                let points = follow(&mut f, (x, y), from, nbd);
                contours.push(Contour {
                    points,
                    kind,
                    parent,
                });
            }

            let v = f.at(x, y);
            if v != 1 {
                lnbd = v.abs();
            }
        }
    }
    contours
}

fn follow(f: &mut Labels, start: (i64, i64), from: (i64, i64), nbd: i64) -> Vec<Point> {
    let to_point = |(x, y): (i64, i64)| Point::new((x - 1) as u32, (y - 1) as u32);
    let (x0, y0) = start;

    // Clockwise search around the start for the first nonzero neighbour.
    let first_dir = dir_index(from.0 - x0, from.1 - y0);
    let found = (0..8)
        .map(|k| (first_dir + k) % 8)
        .map(|d| (x0 + DIRS[d].0, y0 + DIRS[d].1))
        .find(|&(x, y)| f.at(x, y) != 0);
    let Some(p1) = found else {
        f.set(x0, y0, -nbd);
        return vec![to_point(start)];
    };

    let mut points = Vec::new();
    let mut p2 = p1;
    let mut p3 = start;
    loop {
        points.push(to_point(p3));
        // Counter-clockwise search around p3, starting just after p2.
        let back = dir_index(p2.0 - p3.0, p2.1 - p3.1);
        let mut east_zero = false;
        let mut p4 = p3;
        for k in 1..=8 {
            let d = (back + 8 - k) % 8;
            let q = (p3.0 + DIRS[d].0, p3.1 + DIRS[d].1);
            if f.at(q.0, q.1) != 0 {
                p4 = q;
                break;
            }
            if d == EAST {
                east_zero = true;
            }
        }
        if east_zero {
            f.set(p3.0, p3.1, -nbd);
        } else if f.at(p3.0, p3.1) == 1 {
            f.set(p3.0, p3.1, nbd);
        }
        if p4 == start && p3 == p1 {
            break;
        }
        p2 = p3;
        p3 = p4;
    }
    points
}

pub fn contour_to_box(contour: &Contour, class_id: u32) -> Result<BBox> {
    let first = contour.points.first().ok_or(Error::InvalidContour)?;
    let init = BBox {
        class_id,
        x_min: first.x,
        y_min: first.y,
        x_max: first.x,
        y_max: first.y,
    };
    Ok(contour.points.iter().fold(init, |b, p| BBox {
        x_min: b.x_min.min(p.x),
        y_min: b.y_min.min(p.y),
        x_max: b.x_max.max(p.x),
        y_max: b.y_max.max(p.y),
        ..b
    }))
}

/// Pixel count of the 8-connected component containing `seed`.
fn component_area(grid: &BinaryGrid, seed: Point) -> usize {
    let mut seen = vec![false; grid.bits.len()];
    let idx = |p: Point| p.y as usize * grid.width + p.x as usize;
    let mut queue = VecDeque::from([seed]);
    seen[idx(seed)] = true;
    let mut area = 0;
    while let Some(p) = queue.pop_front() {
        area += 1;
        for (dx, dy) in DIRS {
            let (nx, ny) = (p.x as i64 + dx, p.y as i64 + dy);
            if nx < 0 || ny < 0 || nx >= grid.width as i64 || ny >= grid.height as i64 {
                continue;
            }
            let q = Point::new(nx as u32, ny as u32);
            if grid.get(nx as usize, ny as usize) && !seen[idx(q)] {
                seen[idx(q)] = true;
                queue.push_back(q);
            }
        }
    }
    area
}

/// One box per 8-connected component of every nonzero class, ordered by class
/// id and then by raster discovery. Components smaller than `min_area` pixels
/// are dropped; hole borders never produce boxes.
pub fn mask_to_boxes(mask: &LabelMask, min_area: usize) -> Vec<BBox> {
    let mut boxes = Vec::new();
    for class_id in mask.present_classes() {
        let grid = binarize(mask, class_id).expect("present classes are named");
        for contour in trace_borders(&grid) {
            if contour.kind != ContourKind::Outer {
                continue;
            }
            if min_area > 1 && component_area(&grid, contour.points[0]) < min_area {
                continue;
            }
            boxes.push(contour_to_box(&contour, class_id).expect("traced contours are non-empty"));
        }
    }
    boxes
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(ids: &[u32]) -> BTreeMap<u32, String> {
        ids.iter().map(|&i| (i, format!("class{i}"))).collect()
    }

    fn grid_from(rows: &[&str]) -> BinaryGrid {
        let h = rows.len();
        let w = rows[0].len();
        let bits = rows.iter().flat_map(|r| r.chars().map(|c| c == '#')).collect();
        BinaryGrid::new(w, h, bits)
    }

    /// Flood-fill labelling, independent of border following.
    fn flood_fill_components(grid: &BinaryGrid, eight: bool) -> Vec<Vec<Point>> {
        let mut seen = vec![false; grid.bits.len()];
        let mut comps = Vec::new();
        let nbrs: Vec<(i64, i64)> = if eight {
            DIRS.to_vec()
        } else {
            vec![(1, 0), (0, 1), (-1, 0), (0, -1)]
        };
        for y in 0..grid.height {
            for x in 0..grid.width {
                let i = y * grid.width + x;
                if !grid.bits[i] || seen[i] {
                    continue;
                }
                let mut comp = Vec::new();
                let mut stack = vec![(x, y)];
                seen[i] = true;
                while let Some((cx, cy)) = stack.pop() {
                    comp.push(Point::new(cx as u32, cy as u32));
                    for &(dx, dy) in &nbrs {
                        let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= grid.width as i64 || ny >= grid.height as i64 {
                            continue;
                        }
                        let j = ny as usize * grid.width + nx as usize;
                        if grid.bits[j] && !seen[j] {
                            seen[j] = true;
                            stack.push((nx as usize, ny as usize));
                        }
                    }
                }
                comps.push(comp);
            }
        }
        comps
    }

    /// Background regions (4-connected) that do not touch the grid edge.
    fn count_holes(grid: &BinaryGrid) -> usize {
        let inverted = BinaryGrid::new(
            grid.width,
            grid.height,
            grid.bits.iter().map(|b| !b).collect(),
        );
        flood_fill_components(&inverted, false)
            .into_iter()
            .filter(|c| {
                c.iter().all(|p| {
                    p.x > 0
                        && p.y > 0
                        && (p.x as usize) < grid.width - 1
                        && (p.y as usize) < grid.height - 1
                })
            })
            .count()
    }

    #[test]
    fn binarize_empty_mask() {
        let mask = LabelMask::new(4, 3, vec![0; 12], names(&[1])).unwrap();
        assert_eq!(binarize(&mask, 1).unwrap().count_ones(), 0);
    }

    #[test]
    fn binarize_single_pixel() {
        let mut ids = vec![0; 10 * 10];
        ids[7 * 10 + 5] = 3;
        let mask = LabelMask::new(10, 10, ids, names(&[3])).unwrap();
        let g = binarize(&mask, 3).unwrap();
        assert_eq!(g.count_ones(), 1);
        assert!(g.get(5, 7));
    }

    #[test]
    fn binarize_counts_match_direct_scan() {
        let ids: Vec<u32> = (0..64u32).map(|i| (i * 7 + i / 5) % 3).collect();
        let mask = LabelMask::new(8, 8, ids.clone(), names(&[1, 2])).unwrap();
        let direct = ids.iter().filter(|&&c| c == 2).count();
        assert_eq!(binarize(&mask, 2).unwrap().count_ones(), direct);
    }

    #[test]
    fn binarize_rejects_unknown_class() {
        let mask = LabelMask::new(2, 2, vec![0; 4], names(&[1])).unwrap();
        assert!(matches!(binarize(&mask, 9), Err(Error::InvalidClass(9))));
    }

    #[test]
    fn mask_rejects_unnamed_ids_and_bad_size() {
        assert!(LabelMask::new(2, 2, vec![0, 5, 0, 0], names(&[1])).is_err());
        assert!(LabelMask::new(2, 2, vec![0; 3], names(&[1])).is_err());
    }

    #[test]
    fn trace_empty_grid() {
        assert!(trace_borders(&BinaryGrid::new(6, 6, vec![false; 36])).is_empty());
    }

    #[test]
    fn filled_square_has_sixteen_border_pixels() {
        let g = grid_from(&[
            ".......", ".#####.", ".#####.", ".#####.", ".#####.", ".#####.", ".......",
        ]);
        let contours = trace_borders(&g);
        assert_eq!(contours.len(), 1);
        assert_eq!(contours[0].kind, ContourKind::Outer);
        // Hand enumeration: a 5x5 square has 5*4 - 4 perimeter pixels.
        let expected: BTreeSet<Point> = (1..=5u32)
            .flat_map(|y| (1..=5u32).map(move |x| Point::new(x, y)))
            .filter(|p| p.x == 1 || p.x == 5 || p.y == 1 || p.y == 5)
            .collect();
        assert_eq!(expected.len(), 16);
        assert_eq!(contours[0].points.len(), 16);
        let got: BTreeSet<Point> = contours[0].points.iter().copied().collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn square_with_hole() {
        let g = grid_from(&["#####", "#####", "##.##", "#####", "#####"]);
        assert_eq!(flood_fill_components(&g, true).len(), 1);
        assert_eq!(count_holes(&g), 1);
        let contours = trace_borders(&g);
        assert_eq!(contours.len(), 2);
        assert_eq!(contours[0].kind, ContourKind::Outer);
        assert_eq!(contours[1].kind, ContourKind::Hole);
        assert_eq!(contours[1].parent, Some(0));
        // Background is 4-connected, so the hole border is the hole's four
        // edge neighbours.
        let hole: BTreeSet<Point> = contours[1].points.iter().copied().collect();
        let expected: BTreeSet<Point> = [(2, 1), (3, 2), (2, 3), (1, 2)]
            .into_iter()
            .map(|(x, y)| Point::new(x, y))
            .collect();
        assert_eq!(hole, expected);
    }

    #[test]
    fn border_touching_components_are_traced() {
        let g = grid_from(&["#..#", "....", "#..#"]);
        let contours = trace_borders(&g);
        assert_eq!(contours.len(), 4);
        assert!(contours.iter().all(|c| c.points.len() == 1));
    }

    #[test]
    fn diagonal_pixels_are_one_component() {
        let g = grid_from(&["#...", ".#..", "..#."]);
        let contours = trace_borders(&g);
        assert_eq!(contours.len(), 1);
        let b = contour_to_box(&contours[0], 1).unwrap();
        assert_eq!((b.x_min, b.y_min, b.x_max, b.y_max), (0, 0, 2, 2));
    }

    #[test]
    fn nested_component_inside_hole() {
        let g = grid_from(&[
            "#######", "#.....#", "#.###.#", "#.#.#.#", "#.###.#", "#.....#", "#######",
        ]);
        let contours = trace_borders(&g);
        let kinds: Vec<_> = contours.iter().map(|c| c.kind).collect();
        assert_eq!(
            kinds,
            vec![
                ContourKind::Outer,
                ContourKind::Hole,
                ContourKind::Outer,
                ContourKind::Hole
            ]
        );
        assert_eq!(contours[1].parent, Some(0));
        assert_eq!(contours[2].parent, Some(1));
        assert_eq!(contours[3].parent, Some(2));
    }

    #[test]
    fn contour_box_single_point() {
        let c = Contour {
            points: vec![Point::new(3, 4)],
            kind: ContourKind::Outer,
            parent: None,
        };
        let b = contour_to_box(&c, 1).unwrap();
        assert_eq!((b.x_min, b.y_min, b.x_max, b.y_max), (3, 4, 3, 4));
    }

    #[test]
    fn contour_box_empty_is_error() {
        let c = Contour {
            points: vec![],
            kind: ContourKind::Outer,
            parent: None,
        };
        assert!(matches!(contour_to_box(&c, 1), Err(Error::InvalidContour)));
    }

    #[test]
    fn contour_box_rectangle_perimeter() {
        let mut points = Vec::new();
        for x in 10..=20 {
            points.push(Point::new(x, 12));
            points.push(Point::new(x, 30));
        }
        for y in 12..=30 {
            points.push(Point::new(10, y));
            points.push(Point::new(20, y));
        }
        let c = Contour {
            points,
            kind: ContourKind::Outer,
            parent: None,
        };
        let b = contour_to_box(&c, 2).unwrap();
        assert_eq!((b.x_min, b.y_min, b.x_max, b.y_max), (10, 12, 20, 30));
    }

    #[test]
    fn mask_to_boxes_background_only() {
        let mask = LabelMask::new(16, 16, vec![0; 256], names(&[1])).unwrap();
        assert!(mask_to_boxes(&mask, 0).is_empty());
    }

    #[test]
    fn mask_to_boxes_single_rectangle() {
        let (w, h) = (40, 40);
        let mut ids = vec![0; w * h];
        for y in 12..=30 {
            for x in 10..=20 {
                ids[y * w + x] = 1;
            }
        }
        let mask = LabelMask::new(w, h, ids, names(&[1])).unwrap();
        assert_eq!(
            mask_to_boxes(&mask, 0),
            vec![BBox {
                class_id: 1,
                x_min: 10,
                y_min: 12,
                x_max: 20,
                y_max: 30
            }]
        );
    }

    #[test]
    fn min_area_filters_small_components() {
        let mut ids = vec![0; 10 * 10];
        ids[0] = 1;
        for y in 5..8 {
            for x in 5..8 {
                ids[y * 10 + x] = 1;
            }
        }
        let mask = LabelMask::new(10, 10, ids, names(&[1])).unwrap();
        assert_eq!(mask_to_boxes(&mask, 0).len(), 2);
        assert_eq!(mask_to_boxes(&mask, 9).len(), 1);
        assert_eq!(mask_to_boxes(&mask, 10).len(), 0);
    }

    fn arb_grid() -> impl Strategy<Value = BinaryGrid> {
        (1usize..14, 1usize..14).prop_flat_map(|(w, h)| {
            proptest::collection::vec(proptest::bool::weighted(0.45), w * h)
                .prop_map(move |bits| BinaryGrid::new(w, h, bits))
        })
    }

    proptest! {
        #[test]
        fn outer_contours_match_components(g in arb_grid()) {
            let contours = trace_borders(&g);
            let outer: Vec<_> = contours.iter().filter(|c| c.kind == ContourKind::Outer).collect();
            let comps = flood_fill_components(&g, true);
            prop_assert_eq!(outer.len(), comps.len());
            let holes = contours.iter().filter(|c| c.kind == ContourKind::Hole).count();
            prop_assert_eq!(holes, count_holes(&g));
        }

        #[test]
        fn contours_are_closed_neighbour_chains(g in arb_grid()) {
            for c in trace_borders(&g) {
                for p in &c.points {
                    prop_assert!((p.x as usize) < g.width && (p.y as usize) < g.height);
                    prop_assert!(g.get(p.x as usize, p.y as usize));
                }
                if c.points.len() >= 2 {
                    for pair in c.points.windows(2) {
                        prop_assert!(pair[0].is_8_neighbor(&pair[1]));
                    }
                    prop_assert!(c.points.last().unwrap().is_8_neighbor(&c.points[0]));
                }
            }
        }

        #[test]
        fn boxes_cover_every_pixel(g in arb_grid()) {
            let ids: Vec<u32> = g.bits.iter().map(|&b| b as u32).collect();
            let mask = LabelMask::new(g.width, g.height, ids, names(&[1])).unwrap();
            let boxes = mask_to_boxes(&mask, 0);
            for y in 0..g.height {
                for x in 0..g.width {
                    if g.get(x, y) {
                        prop_assert!(boxes.iter().any(|b| b.contains(x as u32, y as u32)));
                    }
                }
            }
        }

        #[test]
        fn relabeling_permutes_boxes(
            ids in proptest::collection::vec(0u32..4, 12 * 9),
        ) {
            let mask = LabelMask::new(12, 9, ids.clone(), names(&[1, 2, 3])).unwrap();
            let perm = |c: u32| match c { 1 => 3, 2 => 1, 3 => 2, o => o };
            let relabeled = LabelMask::new(12, 9, ids.iter().map(|&c| perm(c)).collect(), names(&[1, 2, 3])).unwrap();
            let mut a: Vec<BBox> = mask_to_boxes(&mask, 0).into_iter().map(|b| BBox { class_id: perm(b.class_id), ..b }).collect();
            let mut b = mask_to_boxes(&relabeled, 0);
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
            prop_assert_eq!(mask_to_boxes(&mask, 0), mask_to_boxes(&mask, 0));
        }
    }
}
