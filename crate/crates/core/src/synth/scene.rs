//! Pinhole rendering of piecewise-planar scenes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::netpbm::GrayImage;

/// Depth maps are z-depth images.
pub type DepthMap = GrayImage<f32>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Focal length `0.8 * width` (about 64 degrees horizontal field of view),
    /// principal point at the image center.
    pub fn for_size(width: usize, height: usize) -> Result<Self> {
        let f = 0.8 * width as f64;
        Self::new(f, f, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid camera intrinsics {self:?}")))
        }
    }

    /// Ray through pixel `(x, y)` with unit z-component.
    pub fn ray(&self, x: usize, y: usize) -> [f64; 3] {
        [(x as f64 - self.cx) / self.fx, (y as f64 - self.cy) / self.fy, 1.0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| {
            let tol = 1e-9 * (1.0 + self.min[i].abs().max(self.max[i].abs()));
            p[i] >= self.min[i] - tol && p[i] <= self.max[i] + tol
        })
    }
}

/// Points `X` with `normal . X = offset`, optionally restricted to a box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    pub normal: [f64; 3],
    pub offset: f64,
    pub bounds: Option<Aabb>,
    pub albedo: f64,
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = dot(v, v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

impl Plane {
    pub fn new(normal: [f64; 3], offset: f64) -> Self {
        Self {
            normal: normalize(normal),
            offset,
            bounds: None,
            albedo: 1.0,
        }
    }

    pub fn with_bounds(mut self, bounds: Aabb) -> Self {
        self.bounds = Some(bounds);
        self
    }

    pub fn with_albedo(mut self, albedo: f64) -> Self {
        self.albedo = albedo;
        self
    }

    /// z-depth of the intersection with a unit-z ray, if in front of the camera.
    pub fn hit(&self, ray: [f64; 3]) -> Option<f64> {
        let denom = dot(self.normal, ray);
        if denom.abs() < 1e-12 {
            return None;
        }
        let z = self.offset / denom;
        if !(z > 1e-9) {
            return None;
        }
        match self.bounds {
            Some(b) if !b.contains([z * ray[0], z * ray[1], z]) => None,
            _ => Some(z),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub planes: Vec<Plane>,
    pub ambient: f64,
    pub diffuse: f64,
    /// Unit vector from the surface towards the light.
    pub light_dir: [f64; 3],
    pub seed: u64,
}

impl SceneSpec {
    fn nearest(&self, ray: [f64; 3]) -> Option<(f64, &Plane)> {
        self.planes
            .iter()
            .filter_map(|p| p.hit(ray).map(|z| (z, p)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }
}

pub fn render_depth(scene: &SceneSpec, camera: &CameraIntrinsics) -> Result<DepthMap> {
    let mut data = Vec::with_capacity(camera.width * camera.height);
    for y in 0..camera.height {
        for x in 0..camera.width {
            let (z, _) = scene.nearest(camera.ray(x, y)).ok_or_else(|| {
                Error::Internal(format!("pixel ({x}, {y}) hits no plane in scene {}", scene.seed))
            })?;
            data.push(z as f32);
        }
    }
    GrayImage::new(camera.width, camera.height, data)
}

/// Lambertian shading of the nearest surface, clamped to `[0, 1]`.
pub fn render_image(scene: &SceneSpec, camera: &CameraIntrinsics) -> Result<GrayImage<f32>> {
    let mut data = Vec::with_capacity(camera.width * camera.height);
    for y in 0..camera.height {
        for x in 0..camera.width {
            let ray = camera.ray(x, y);
            let (_, plane) = scene.nearest(ray).ok_or_else(|| {
                Error::Internal(format!("pixel ({x}, {y}) hits no plane in scene {}", scene.seed))
            })?;
            // shade with the side of the plane that faces the camera
            let facing = if dot(plane.normal, ray) > 0.0 {
                plane.normal.map(|c| -c)
            } else {
                plane.normal
            };
            let lambert = dot(facing, scene.light_dir).max(0.0);
            let v = scene.ambient + lambert * scene.diffuse * plane.albedo;
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    GrayImage::new(camera.width, camera.height, data)
}

pub const CAMERA_HEIGHT: f64 = 1.5;

/// Draws one scene of the synthetic family, for a camera `CAMERA_HEIGHT` above
/// a level floor looking along +z (y points down):
///
/// - a floor plane and a fronto-parallel far plane at `0.9 * kappa`;
/// - 0-2 vertical walls, each either a back wall at depth 3.5 to `0.85 * kappa`
///   with yaw up to 0.4 rad, or a side wall 1.2 to 3 units left or right;
/// - 0-3 axis-aligned boxes resting on the floor, front face at depth 2 to
///   `0.7 * kappa`, each side 0.4 to 1.5 units, height 0.3 to 1.3.
///
/// Every surface gets an albedo in `[0.45, 1.0]`; the light comes from above,
/// slightly left and behind the camera.
pub fn random_scene(rng: &mut ChaCha8Rng, kappa: f64, seed: u64) -> SceneSpec {
    let far = 0.9 * kappa;
    let mut planes = vec![
        Plane::new([0.0, -1.0, 0.0], -CAMERA_HEIGHT).with_albedo(rng.gen_range(0.45..0.8)),
        Plane::new([0.0, 0.0, -1.0], -far).with_albedo(rng.gen_range(0.6..1.0)),
    ];
    for _ in 0..rng.gen_range(0..=2) {
        let yaw: f64 = rng.gen_range(-0.4..0.4);
        let albedo = rng.gen_range(0.45..1.0);
        if rng.gen_bool(0.5) {
            let dist = rng.gen_range(3.5..0.85 * kappa);
            let n = [yaw.sin(), 0.0, -yaw.cos()];
            planes.push(Plane::new(n, -yaw.cos() * dist).with_albedo(albedo));
        } else {
            let side = if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
            let dist = rng.gen_range(1.2..3.0);
            // normal points back towards the optical axis
            let plane = Plane::new([-side * yaw.cos(), 0.0, yaw.sin()], 0.0);
            let offset = dot(plane.normal, [side * dist, 0.0, 0.0]);
            planes.push(Plane { offset, ..plane }.with_albedo(albedo));
        }
    }
    for _ in 0..rng.gen_range(0..=3) {
        let cx: f64 = rng.gen_range(-2.5..2.5);
        let z0: f64 = rng.gen_range(2.0..0.7 * kappa);
        let w: f64 = rng.gen_range(0.4..1.5);
        let d: f64 = rng.gen_range(0.4..1.5);
        let h: f64 = rng.gen_range(0.3..1.3);
        let albedo = rng.gen_range(0.45..1.0);
        let bounds = Aabb {
            min: [cx - w / 2.0, CAMERA_HEIGHT - h, z0],
            max: [cx + w / 2.0, CAMERA_HEIGHT, z0 + d],
        };
        let faces = [
            Plane::new([0.0, 0.0, -1.0], -z0),
            Plane::new([0.0, -1.0, 0.0], -(CAMERA_HEIGHT - h)),
            Plane::new([-1.0, 0.0, 0.0], -(cx - w / 2.0)),
            Plane::new([1.0, 0.0, 0.0], cx + w / 2.0),
        ];
        planes.extend(faces.into_iter().map(|f| f.with_bounds(bounds).with_albedo(albedo)));
    }
    SceneSpec {
        planes,
        ambient: 0.2,
        diffuse: 0.8,
        light_dir: normalize([0.3, -1.0, -0.6]),
        seed,
    }
}
