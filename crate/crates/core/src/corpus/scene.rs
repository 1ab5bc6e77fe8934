use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Size {
    Small,
    Large,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Position {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
    Center,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Green, Color::Blue, Color::Yellow];

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
        }
    }

    pub fn rgb(self) -> [f32; 3] {
        match self {
            Color::Red => [1.0, 0.0, 0.0],
            Color::Green => [0.0, 1.0, 0.0],
            Color::Blue => [0.0, 0.0, 1.0],
            Color::Yellow => [1.0, 1.0, 0.0],
        }
    }
}

impl Size {
    pub const ALL: [Size; 2] = [Size::Small, Size::Large];

    pub fn word(self) -> &'static str {
        match self {
            Size::Small => "small",
            Size::Large => "large",
        }
    }

    /// Side length of the object's bounding square.
    pub fn side(self, canvas: usize) -> usize {
        match self {
            Size::Small => canvas / 4,
            Size::Large => canvas * 7 / 16,
        }
    }
}

impl Position {
    pub const ALL: [Position; 5] = [
        Position::TopLeft,
        Position::TopRight,
        Position::BottomLeft,
        Position::BottomRight,
        Position::Center,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Position::TopLeft => "top-left",
            Position::TopRight => "top-right",
            Position::BottomLeft => "bottom-left",
            Position::BottomRight => "bottom-right",
            Position::Center => "center",
        }
    }

    /// Slot centre in pixel coordinates `(x, y)`.
    pub fn center(self, canvas: usize) -> (usize, usize) {
        let (q, h, tq) = (canvas / 4, canvas / 2, 3 * canvas / 4);
        match self {
            Position::TopLeft => (q, q),
            Position::TopRight => (tq, q),
            Position::BottomLeft => (q, tq),
            Position::BottomRight => (tq, tq),
            Position::Center => (h, h),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub color: Color,
    pub size: Size,
    pub position: Position,
}

/// Axis-aligned bounding square `[x0, x0 + side) × [y0, y0 + side)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub side: usize,
}

impl ObjectSpec {
    pub fn bbox(&self, canvas: usize) -> BoundingBox {
        let side = self.size.side(canvas);
        let (cx, cy) = self.position.center(canvas);
        BoundingBox {
            x0: cx.saturating_sub(side / 2),
            y0: cy.saturating_sub(side / 2),
            side,
        }
    }

    /// Index of the (shape, color) attribute pair, in `0..12`.
    pub fn class_index(&self) -> usize {
        let s = Shape::ALL
            .iter()
            .position(|&v| v == self.shape)
            .unwrap_or(0);
        let c = Color::ALL
            .iter()
            .position(|&v| v == self.color)
            .unwrap_or(0);
        s * Color::ALL.len() + c
    }
}

/// Number of distinct dominant-object classes (3 shapes × 4 colors).
pub const NUM_CLASSES: usize = 12;
pub const MAX_OBJECTS: usize = 4;
pub const MIN_CANVAS: usize = 8;

/// Procedural description of one synthetic scene. The first object is the
/// dominant one: it is drawn on top and leads every caption.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    objects: Vec<ObjectSpec>,
    canvas_size: usize,
    seed: u64,
}

impl SceneSpec {
    pub fn new(objects: Vec<ObjectSpec>, canvas_size: usize, seed: u64) -> Result<Self> {
        validate_canvas(canvas_size)?;
        if objects.is_empty() || objects.len() > MAX_OBJECTS {
            return Err(Error::Scene(format!(
                "scene needs 1..={MAX_OBJECTS} objects, got {}",
                objects.len()
            )));
        }
        for (i, a) in objects.iter().enumerate() {
            if objects[..i].iter().any(|b| b.position == a.position) {
                return Err(Error::Scene(format!(
                    "two objects share the {} slot",
                    a.position.word()
                )));
            }
            let bb = a.bbox(canvas_size);
            if bb.side == 0 || bb.x0 + bb.side > canvas_size || bb.y0 + bb.side > canvas_size {
                return Err(Error::Scene(format!("object {i} does not fit the canvas")));
            }
        }
        Ok(Self {
            objects,
            canvas_size,
            seed,
        })
    }

    /// Uniformly random scene: 1–4 objects in distinct slots.
    pub fn random(seed: u64, canvas_size: usize) -> Result<Self> {
        validate_canvas(canvas_size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=MAX_OBJECTS);
        let mut slots = Position::ALL.to_vec();
        slots.shuffle(&mut rng);
        let objects = slots
            .into_iter()
            .take(n)
            .map(|position| ObjectSpec {
                shape: Shape::ALL[rng.random_range(0..Shape::ALL.len())],
                color: Color::ALL[rng.random_range(0..Color::ALL.len())],
                size: Size::ALL[rng.random_range(0..Size::ALL.len())],
                position,
            })
            .collect();
        Self::new(objects, canvas_size, seed)
    }

    pub fn objects(&self) -> &[ObjectSpec] {
        &self.objects
    }

    pub fn canvas_size(&self) -> usize {
        self.canvas_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dominant(&self) -> &ObjectSpec {
        &self.objects[0]
    }
}

fn validate_canvas(canvas_size: usize) -> Result<()> {
    if canvas_size < MIN_CANVAS || !canvas_size.is_power_of_two() {
        return Err(Error::Scene(format!(
            "canvas size must be a power of two ≥ {MIN_CANVAS}, got {canvas_size}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(position: Position) -> ObjectSpec {
        ObjectSpec {
            shape: Shape::Square,
            color: Color::Red,
            size: Size::Large,
            position,
        }
    }

    #[test]
    fn zero_area_canvas_is_rejected() {
        assert!(SceneSpec::new(vec![obj(Position::Center)], 0, 1).is_err());
        assert!(SceneSpec::new(vec![obj(Position::Center)], 24, 1).is_err());
    }

    #[test]
    fn object_count_and_slots_are_validated() {
        assert!(SceneSpec::new(vec![], 32, 1).is_err());
        assert!(SceneSpec::new(vec![obj(Position::Center), obj(Position::Center)], 32, 1).is_err());
        let five = Position::ALL.iter().map(|&p| obj(p)).collect();
        assert!(SceneSpec::new(five, 32, 1).is_err());
    }

    #[test]
    fn random_scenes_satisfy_invariants() {
        for seed in 0..200 {
            for canvas in [8, 16, 32, 64] {
                let s = SceneSpec::random(seed, canvas).unwrap();
                assert!((1..=4).contains(&s.objects().len()));
                for o in s.objects() {
                    let bb = o.bbox(canvas);
                    assert!(bb.x0 + bb.side <= canvas && bb.y0 + bb.side <= canvas);
                }
            }
        }
    }

    #[test]
    fn class_indices_cover_twelve_classes() {
        let mut seen = std::collections::HashSet::new();
        for shape in Shape::ALL {
            for color in Color::ALL {
                let o = ObjectSpec {
                    shape,
                    color,
                    size: Size::Small,
                    position: Position::Center,
                };
                seen.insert(o.class_index());
            }
        }
        assert_eq!(seen.len(), NUM_CLASSES);
        assert!(seen.iter().all(|&c| c < NUM_CLASSES));
    }
}
