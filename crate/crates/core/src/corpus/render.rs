use super::scene::{ObjectSpec, SceneSpec, Shape};
use crate::tensor::{ImageTensor, Tensor};

/// Hard-edged rasterization on a black background. A pixel belongs to a
/// shape when its centre does. Objects are painted last-to-first so the
/// dominant object ends up on top.
pub fn render_scene(spec: &SceneSpec) -> ImageTensor {
    let n = spec.canvas_size();
    let mut img = Tensor::zeros(&[3, n, n]);
    for obj in spec.objects().iter().rev() {
        paint(&mut img, obj, n);
    }
    img
}

fn paint(img: &mut ImageTensor, obj: &ObjectSpec, n: usize) {
    let bb = obj.bbox(n);
    let rgb = obj.color.rgb();
    let side = bb.side as f64;
    let (x0, y0) = (bb.x0 as f64, bb.y0 as f64);
    let (cx, cy) = (x0 + side / 2.0, y0 + side / 2.0);
    let data = img.data_mut();
    for py in bb.y0..bb.y0 + bb.side {
        for px in bb.x0..bb.x0 + bb.side {
            let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
            let inside = match obj.shape {
                Shape::Square => true,
                Shape::Circle => {
                    let r = side / 2.0;
                    (x - cx).powi(2) + (y - cy).powi(2) <= r * r
                }
                Shape::Triangle => {
                    in_triangle((x, y), (cx, y0), (x0, y0 + side), (x0 + side, y0 + side))
                }
            };
            if inside {
                for (c, &v) in rgb.iter().enumerate() {
                    data[c * n * n + py * n + px] = v;
                }
            }
        }
    }
}

fn in_triangle(p: (f64, f64), a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    let cross = |o: (f64, f64), u: (f64, f64), v: (f64, f64)| {
        (u.0 - o.0) * (v.1 - o.1) - (u.1 - o.1) * (v.0 - o.0)
    };
    let d1 = cross(a, b, p);
    let d2 = cross(b, c, p);
    let d3 = cross(c, a, p);
    let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(neg && pos)
}
