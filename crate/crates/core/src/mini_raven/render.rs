//! Rasterisation of cell attributes.
//!
//! Shapes are filled regular polygons (or circles) with a dark outline,
//! anti-aliased from an exact signed distance. Radius is linear in the size
//! level and fill intensity linear in the colour level; background is white.

use crate::problem::{Cell, CellAttrs, Configuration, ShapeType};

pub const SIZE_LEVELS: u8 = 6;
pub const COLOR_LEVELS: u8 = 10;

/// Slot centres and half-extents in unit coordinates, in canonical fill order.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub slots: Vec<(f32, f32, f32)>,
    /// Fixed outer frame (centre, half-extent) for Out-In layouts.
    pub outer: Option<(f32, f32, f32)>,
}

pub fn layout(configuration: Configuration) -> Layout {
    let grid = |n: usize, lo: f32, hi: f32| -> Vec<(f32, f32, f32)> {
        let step = (hi - lo) / n as f32;
        let mut v = Vec::new();
        for r in 0..n {
            for c in 0..n {
                v.push((lo + step * (c as f32 + 0.5), lo + step * (r as f32 + 0.5), step / 2.0));
            }
        }
        v
    };
    match configuration {
        Configuration::Center => Layout {
            slots: vec![(0.5, 0.5, 0.5)],
            outer: None,
        },
        Configuration::Grid2x2 => Layout {
            slots: grid(2, 0.0, 1.0),
            outer: None,
        },
        Configuration::Grid3x3 => Layout {
            slots: grid(3, 0.0, 1.0),
            outer: None,
        },
        Configuration::LeftRight => Layout {
            slots: vec![(0.25, 0.5, 0.25), (0.75, 0.5, 0.25)],
            outer: None,
        },
        Configuration::UpDown => Layout {
            slots: vec![(0.5, 0.25, 0.25), (0.5, 0.75, 0.25)],
            outer: None,
        },
        Configuration::OutInCenter => Layout {
            slots: vec![(0.5, 0.5, 0.22)],
            outer: Some((0.5, 0.5, 0.5)),
        },
        Configuration::OutInGrid => Layout {
            slots: grid(2, 0.28, 0.72),
            outer: Some((0.5, 0.5, 0.5)),
        },
    }
}

/// Number of slots a layout can occupy.
pub fn slot_count(configuration: Configuration) -> usize {
    layout(configuration).slots.len()
}

/// Whether the number of occupied slots varies (grid layouts only).
pub fn has_variable_number(configuration: Configuration) -> bool {
    matches!(
        configuration,
        Configuration::Grid2x2 | Configuration::Grid3x3 | Configuration::OutInGrid
    )
}

fn radius_fraction(size: u8) -> f32 {
    0.30 + 0.12 * size as f32
}

pub fn fill_intensity(color: u8) -> f32 {
    255.0 * (1.0 - color as f32 / (COLOR_LEVELS - 1) as f32)
}

struct Shape {
    cx: f32,
    cy: f32,
    radius: f32,
    vertices: Vec<(f32, f32)>,
    circle: bool,
}

impl Shape {
    fn new(kind: ShapeType, cx: f32, cy: f32, radius: f32) -> Self {
        let sides = match kind {
            ShapeType::Triangle => 3,
            ShapeType::Square => 4,
            ShapeType::Pentagon => 5,
            ShapeType::Hexagon => 6,
            ShapeType::Circle => 0,
        };
        // vertex up, except the square which sits axis-aligned
        let phase = if sides == 4 {
            std::f32::consts::FRAC_PI_4
        } else {
            -std::f32::consts::FRAC_PI_2
        };
        let vertices = (0..sides)
            .map(|i| {
                let a = phase + i as f32 * std::f32::consts::TAU / sides as f32;
                (cx + radius * a.cos(), cy + radius * a.sin())
            })
            .collect();
        Self {
            cx,
            cy,
            radius,
            vertices,
            circle: sides == 0,
        }
    }

    /// Negative inside.
    fn signed_distance(&self, px: f32, py: f32) -> f32 {
        if self.circle {
            return ((px - self.cx).powi(2) + (py - self.cy).powi(2)).sqrt() - self.radius;
        }
        let v = &self.vertices;
        let n = v.len();
        let mut d = f32::INFINITY;
        let mut inside = false;
        for i in 0..n {
            let (ax, ay) = v[i];
            let (bx, by) = v[(i + n - 1) % n];
            let (ex, ey) = (bx - ax, by - ay);
            let (wx, wy) = (px - ax, py - ay);
            let t = ((wx * ex + wy * ey) / (ex * ex + ey * ey)).clamp(0.0, 1.0);
            let (qx, qy) = (wx - ex * t, wy - ey * t);
            d = d.min(qx * qx + qy * qy);
            if (ay > py) != (by > py) && px < (bx - ax) * (py - ay) / (by - ay) + ax {
                inside = !inside;
            }
        }
        let d = d.sqrt();
        if inside {
            -d
        } else {
            d
        }
    }
}

fn draw(canvas: &mut [f32], side: usize, shape: &Shape, fill: Option<f32>, line_width: f32) {
    let margin = line_width + 2.0;
    let lo_x = ((shape.cx - shape.radius - margin).floor().max(0.0)) as usize;
    let hi_x = ((shape.cx + shape.radius + margin).ceil() as usize).min(side);
    let lo_y = ((shape.cy - shape.radius - margin).floor().max(0.0)) as usize;
    let hi_y = ((shape.cy + shape.radius + margin).ceil() as usize).min(side);
    for y in lo_y..hi_y {
        for x in lo_x..hi_x {
            let sd = shape.signed_distance(x as f32 + 0.5, y as f32 + 0.5);
            let px = &mut canvas[y * side + x];
            if let Some(fill) = fill {
                let cov = (0.5 - sd).clamp(0.0, 1.0);
                *px = *px * (1.0 - cov) + fill * cov;
            }
            let stroke = (line_width / 2.0 + 0.5 - sd.abs()).clamp(0.0, 1.0);
            *px *= 1.0 - stroke;
        }
    }
}

/// Deterministic raster of one cell.
pub fn render_cell(
    attrs: &CellAttrs,
    configuration: Configuration,
    outer: Option<ShapeType>,
    resolution: usize,
) -> Cell {
    let side = resolution as f32;
    let mut canvas = vec![255.0f32; resolution * resolution];
    let line_width = (side / 48.0).max(1.0);
    let lay = layout(configuration);
    if let (Some((cx, cy, half)), Some(kind)) = (lay.outer, outer) {
        let shape = Shape::new(kind, cx * side, cy * side, half * side * 0.95);
        draw(&mut canvas, resolution, &shape, None, line_width);
    }
    let occupied = (attrs.number as usize).min(lay.slots.len());
    let fill = fill_intensity(attrs.color);
    for &(cx, cy, half) in lay.slots.iter().take(occupied) {
        let r = half * side * radius_fraction(attrs.size);
        let shape = Shape::new(attrs.shape, cx * side, cy * side, r);
        draw(&mut canvas, resolution, &shape, Some(fill), line_width);
    }
    let pixels = canvas.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    Cell::new(resolution, pixels).expect("square canvas")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attrs(shape: ShapeType, size: u8, color: u8) -> CellAttrs {
        CellAttrs {
            shape,
            size,
            color,
            number: 1,
        }
    }

    fn foreground(c: &Cell) -> usize {
        c.pixels().iter().filter(|&&p| p < 250).count()
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = attrs(ShapeType::Pentagon, 3, 4);
        assert_eq!(
            render_cell(&a, Configuration::Center, None, 96),
            render_cell(&a, Configuration::Center, None, 96)
        );
    }

    #[test]
    fn larger_size_covers_more_pixels() {
        for shape in ShapeType::ALL {
            let small = render_cell(&attrs(shape, 0, 6), Configuration::Center, None, 96);
            let big = render_cell(&attrs(shape, 5, 6), Configuration::Center, None, 96);
            assert!(foreground(&big) > foreground(&small), "{shape:?}");
            for s in 0..5 {
                let a = render_cell(&attrs(shape, s, 6), Configuration::Center, None, 96);
                let b = render_cell(&attrs(shape, s + 1, 6), Configuration::Center, None, 96);
                assert!(foreground(&b) > foreground(&a));
            }
        }
    }

    #[test]
    fn every_pair_of_shapes_renders_differently() {
        for (i, a) in ShapeType::ALL.iter().enumerate() {
            for b in &ShapeType::ALL[i + 1..] {
                for size in 0..SIZE_LEVELS {
                    let ra = render_cell(&attrs(*a, size, 5), Configuration::Center, None, 96);
                    let rb = render_cell(&attrs(*b, size, 5), Configuration::Center, None, 96);
                    assert_ne!(ra, rb, "{a:?} vs {b:?} at size {size}");
                }
            }
        }
    }

    #[test]
    fn color_level_sets_fill_intensity() {
        let light = render_cell(&attrs(ShapeType::Square, 4, 0), Configuration::Center, None, 96);
        let dark = render_cell(&attrs(ShapeType::Square, 4, 9), Configuration::Center, None, 96);
        assert_eq!(light.get(48, 48), 255);
        assert_eq!(dark.get(48, 48), 0);
        assert_eq!(dark.get(1, 1), 255);
    }

    #[test]
    fn number_fills_slots_in_order() {
        let mut a = attrs(ShapeType::Circle, 2, 9);
        a.number = 1;
        let one = render_cell(&a, Configuration::Grid2x2, None, 96);
        a.number = 3;
        let three = render_cell(&a, Configuration::Grid2x2, None, 96);
        assert_eq!(one.get(24, 24), 0);
        assert_eq!(one.get(72, 72), 255);
        assert_eq!(three.get(24, 72), 0);
        assert_eq!(three.get(72, 72), 255);
    }

    #[test]
    fn every_configuration_renders() {
        for c in Configuration::ALL {
            let a = CellAttrs {
                shape: ShapeType::Hexagon,
                size: 3,
                color: 7,
                number: slot_count(c) as u8,
            };
            let cell = render_cell(&a, c, Some(ShapeType::Square), 64);
            assert!(foreground(&cell) > 0, "{c:?}");
        }
    }
}
