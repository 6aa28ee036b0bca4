//! Pinhole devices, the grating law and the exact first-order ray solver.

use alloc::format;
use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::math;

/// Diffraction order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Order {
    Minus,
    Zero,
    Plus,
}

impl Order {
    pub const FIRST: [Order; 2] = [Order::Minus, Order::Plus];
    pub const ALL: [Order; 3] = [Order::Minus, Order::Zero, Order::Plus];

    pub fn value(self) -> i32 {
        match self {
            Order::Minus => -1,
            Order::Zero => 0,
            Order::Plus => 1,
        }
    }

    pub fn from_value(m: i32) -> Result<Self> {
        match m {
            -1 => Ok(Order::Minus),
            0 => Ok(Order::Zero),
            1 => Ok(Order::Plus),
            _ => Err(Error::UnsupportedOrder(m)),
        }
    }

    /// 0 for −1, 1 for +1. Panics on the zero order.
    #[inline]
    pub fn first_index(self) -> usize {
        match self {
            Order::Minus => 0,
            Order::Plus => 1,
            Order::Zero => panic!("zero order has no first-order slot"),
        }
    }

    pub fn reversed(self) -> Self {
        match self {
            Order::Minus => Order::Plus,
            Order::Zero => Order::Zero,
            Order::Plus => Order::Minus,
        }
    }
}

/// Which first orders are active. The zero order is always present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OrderSet {
    pub minus: bool,
    pub plus: bool,
}

impl OrderSet {
    pub const BOTH: OrderSet = OrderSet { minus: true, plus: true };
    pub const NONE: OrderSet = OrderSet { minus: false, plus: false };

    pub fn contains(&self, order: Order) -> bool {
        match order {
            Order::Zero => true,
            Order::Minus => self.minus,
            Order::Plus => self.plus,
        }
    }

    pub fn insert(&mut self, order: Order) {
        match order {
            Order::Minus => self.minus = true,
            Order::Plus => self.plus = true,
            Order::Zero => {}
        }
    }

    pub fn first_orders(self) -> impl Iterator<Item = Order> {
        Order::FIRST.into_iter().filter(move |&o| self.contains(o))
    }

    pub fn is_empty(&self) -> bool {
        !self.minus && !self.plus
    }

    pub fn len(&self) -> usize {
        self.minus as usize + self.plus as usize
    }
}

/// Two-coefficient radial distortion on normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialDistortion {
    pub k1: f64,
    pub k2: f64,
}

impl RadialDistortion {
    fn factor(&self, r2: f64) -> f64 {
        1.0 + self.k1 * r2 + self.k2 * r2 * r2
    }

    pub fn distort(&self, x: f64, y: f64) -> (f64, f64) {
        let f = self.factor(x * x + y * y);
        (x * f, y * f)
    }

    /// Fixed-point inversion of [`distort`](Self::distort).
    pub fn undistort(&self, xd: f64, yd: f64) -> (f64, f64) {
        let (mut x, mut y) = (xd, yd);
        for _ in 0..50 {
            let f = self.factor(x * x + y * y);
            let (nx, ny) = (xd / f, yd / f);
            let done = math::abs(nx - x) + math::abs(ny - y) < 1e-15;
            x = nx;
            y = ny;
            if done {
                break;
            }
        }
        (x, y)
    }
}

/// Pinhole camera or projector. `rotation` and `translation` map world
/// points into the device frame: `X_dev = R·X + t`, in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct PinholeModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    pub width: u32,
    pub height: u32,
    pub distortion: Option<RadialDistortion>,
}

impl PinholeModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !fx.is_finite() || !fy.is_finite() {
            return Err(Error::InvalidArgument(format!("focal lengths must be positive, got ({fx}, {fy})")));
        }
        if !(cx.is_finite() && cy.is_finite()) || translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite intrinsics or translation".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("resolution must be positive".into()));
        }
        let err = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if !(err < 1e-9) || rotation.determinant() < 0.0 {
            return Err(Error::InvalidArgument(format!("rotation is not orthonormal (error {err:e})")));
        }
        Ok(Self { fx, fy, cx, cy, rotation, translation, width, height, distortion: None })
    }

    /// Device at the world origin looking down +z.
    pub fn centered(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        Self::new(fx, fy, cx, cy, Matrix3::identity(), Vector3::zeros(), width, height)
    }

    pub fn with_distortion(mut self, d: RadialDistortion) -> Self {
        self.distortion = Some(d);
        self
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Optical center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    #[inline]
    pub fn to_device(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }

    #[inline]
    pub fn to_world(&self, device: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (device - self.translation)
    }

    /// Project a point given in the device frame.
    pub fn project_device(&self, p: &Vector3<f64>) -> Result<[f64; 2]> {
        if !(p.z > 0.0) {
            return Err(Error::BehindDevice);
        }
        let (mut x, mut y) = (p.x / p.z, p.y / p.z);
        if let Some(d) = &self.distortion {
            (x, y) = d.distort(x, y);
        }
        Ok([self.fx * x + self.cx, self.fy * y + self.cy])
    }

    pub fn project(&self, world: &Vector3<f64>) -> Result<[f64; 2]> {
        self.project_device(&self.to_device(world))
    }

    /// Unit-depth ray through pixel `p` in the device frame.
    pub fn ray_device(&self, p: [f64; 2]) -> Vector3<f64> {
        let (mut x, mut y) = ((p[0] - self.cx) / self.fx, (p[1] - self.cy) / self.fy);
        if let Some(d) = &self.distortion {
            (x, y) = d.undistort(x, y);
        }
        Vector3::new(x, y, 1.0)
    }

    /// World point seen at pixel `p` with device-frame depth `z`.
    pub fn unproject(&self, p: [f64; 2], z: f64) -> Result<Vector3<f64>> {
        if !(z > 0.0) {
            return Err(Error::NonPositiveDepth(z));
        }
        Ok(self.to_world(&(self.ray_device(p) * z)))
    }
}

/// Unit direction after diffraction into order `m` at `nm` through grooves of
/// density `g` lines/nm.
pub fn diffract(v: &Vector3<f64>, m: i32, nm: f64, g: f64) -> Result<Vector3<f64>> {
    if m == 0 {
        return Ok(*v);
    }
    let dx = -(m as f64) * g * nm + v.x;
    let dy = v.y;
    let s = dx * dx + dy * dy;
    if s > 1.0 {
        return Err(Error::Evanescent(math::sqrt(s)));
    }
    Ok(Vector3::new(dx, dy, math::sqrt(1.0 - s)))
}

/// Transmission grating mounted perpendicular to the projector axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GratingModel {
    groove_density: f64,
    offset_mm: f64,
    angle_rad: f64,
    orders: OrderSet,
}

impl GratingModel {
    /// `groove_density` in lines/nm; `angle_rad` rotates the dispersion axis
    /// away from the projector x-axis.
    pub fn new(groove_density: f64, offset_mm: f64, angle_rad: f64, orders: OrderSet) -> Result<Self> {
        if !(groove_density > 0.0) || !groove_density.is_finite() {
            return Err(Error::InvalidArgument("groove density must be positive".into()));
        }
        if !(offset_mm > 0.0) || !offset_mm.is_finite() {
            return Err(Error::InvalidArgument("grating offset must be positive".into()));
        }
        if !angle_rad.is_finite() {
            return Err(Error::InvalidArgument("grating angle must be finite".into()));
        }
        Ok(Self { groove_density, offset_mm, angle_rad, orders })
    }

    pub fn groove_density(&self) -> f64 {
        self.groove_density
    }

    pub fn offset_mm(&self) -> f64 {
        self.offset_mm
    }

    pub fn angle_rad(&self) -> f64 {
        self.angle_rad
    }

    pub fn orders(&self) -> OrderSet {
        self.orders
    }

    pub fn with_orders(mut self, orders: OrderSet) -> Self {
        self.orders = orders;
        self
    }

    fn to_grating(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let (s, c) = (math::sin(self.angle_rad), math::cos(self.angle_rad));
        Vector3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z)
    }

    fn from_grating(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let (s, c) = (math::sin(self.angle_rad), math::cos(self.angle_rad));
        Vector3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
    }
}

/// Camera, projector and grating.
#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    pub camera: PinholeModel,
    pub projector: PinholeModel,
    pub grating: GratingModel,
}

impl Rig {
    pub fn new(camera: PinholeModel, projector: PinholeModel, grating: GratingModel) -> Result<Self> {
        let b = (camera.center() - projector.center()).norm();
        if !(b > 0.0) {
            return Err(Error::InvalidArgument("camera and projector centers coincide".into()));
        }
        Ok(Self { camera, projector, grating })
    }

    /// Rig without the baseline check, for degenerate geometry tests.
    pub fn new_unchecked(camera: PinholeModel, projector: PinholeModel, grating: GratingModel) -> Self {
        Self { camera, projector, grating }
    }

    pub fn baseline(&self) -> f64 {
        (self.camera.center() - self.projector.center()).norm()
    }

    /// Distance from the projector center to the surface point at (p, z).
    pub fn propagation_distance(&self, p: [f64; 2], z: f64) -> Result<f64> {
        Ok((self.camera.unproject(p, z)? - self.projector.center()).norm())
    }

    /// Desk-scale prototype: 480×240 camera, 640×360 projector 150 mm to the
    /// right, toed in to converge at 700 mm; 500 lines/mm grating 10 mm in
    /// front of the projector.
    pub fn prototype() -> Self {
        let camera = PinholeModel::centered(600.0, 600.0, 240.0, 120.0, 480, 240).expect("valid camera");
        let projector = toed_in_projector(150.0, 700.0, 800.0, 640, 360);
        let grating = GratingModel::new(5e-4, 10.0, 0.0, OrderSet::BOTH).expect("valid grating");
        Self::new(camera, projector, grating).expect("valid rig")
    }

    /// Rectified 64×64 demo rig. The camera window is centered on the
    /// projector axis at 800 mm, where disparity is exactly 150 px.
    pub fn demo() -> Self {
        let camera = PinholeModel::centered(800.0, 800.0, -118.0, 32.0, 64, 64).expect("valid camera");
        let projector = PinholeModel::new(
            800.0,
            800.0,
            320.0,
            180.0,
            Matrix3::identity(),
            Vector3::new(-150.0, 0.0, 0.0),
            640,
            360,
        )
        .expect("valid projector");
        let grating = GratingModel::new(5e-4, 10.0, 0.0, OrderSet::BOTH).expect("valid grating");
        Self::new(camera, projector, grating).expect("valid rig")
    }
}

fn toed_in_projector(baseline: f64, converge_z: f64, f: f64, width: u32, height: u32) -> PinholeModel {
    let n = math::sqrt(baseline * baseline + converge_z * converge_z);
    let (s, c) = (-baseline / n, converge_z / n);
    let r = Matrix3::new(c, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, c);
    let center = Vector3::new(baseline, 0.0, 0.0);
    let t = -(r * center);
    PinholeModel::new(f, f, width as f64 / 2.0, height as f64 / 2.0, r, t, width, height).expect("valid projector")
}

/// Grating point and projector pixel feeding a scene point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GratingSolution {
    /// Point on the grating, projector frame, mm.
    pub point: Vector3<f64>,
    /// Projector pixel whose ray reaches `point`.
    pub pixel: [f64; 2],
    /// ‖dg(v) − w‖ at the solution.
    pub residual: f64,
}

const BISECTION_ITERS: usize = 80;
const RESIDUAL_TOL: f64 = 1e-8;

fn unit(v: Vector3<f64>) -> Vector3<f64> {
    v / v.norm()
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Finds the grating point through which order `order` at `nm` reaches the
/// world point `scene`.
///
/// Diffraction keeps the y-component of the direction, so for a fixed
/// x on the grating the y-consistent point is unique; the outer search then
/// bisects the signed x-residual along that curve.
pub fn solve_grating_point(scene: &Vector3<f64>, rig: &Rig, order: Order, nm: f64) -> Result<GratingSolution> {
    let gr = &rig.grating;
    if !gr.orders.contains(order) {
        return Err(Error::UnsupportedOrder(order.value()));
    }
    let p = rig.projector.to_device(scene);
    let f = gr.offset_mm;
    if !(p.z > f) {
        return Err(Error::BehindDevice);
    }
    if order == Order::Zero {
        let r = p * (f / p.z);
        return Ok(GratingSolution { point: r, pixel: rig.projector.project_device(&r)?, residual: 0.0 });
    }
    let m = order.value();
    let shift = m as f64 * gr.groove_density * nm;
    let pg = gr.to_grating(&p);
    let bound = 50.0 * (pg.norm() + f);

    let y_at = |x: f64| {
        bisect(-bound, bound, |y| {
            let v = unit(Vector3::new(x, y, f));
            let w = unit(pg - Vector3::new(x, y, f));
            v.y - w.y
        })
    };
    let x_residual = |x: f64| {
        let y = y_at(x);
        let r = Vector3::new(x, y, f);
        unit(r).x - shift - unit(pg - r).x
    };
    if !(x_residual(-bound) < 0.0 && x_residual(bound) > 0.0) {
        return Err(Error::NoSolution);
    }
    let x = bisect(-bound, bound, x_residual);
    let r = Vector3::new(x, y_at(x), f);
    let d = diffract(&unit(r), m, nm, gr.groove_density).map_err(|_| Error::NoSolution)?;
    let residual = (d - unit(pg - r)).norm();
    if !(residual < RESIDUAL_TOL) {
        return Err(Error::NoConvergence(residual));
    }
    let point = gr.from_grating(&r);
    Ok(GratingSolution { point, pixel: rig.projector.project_device(&point)?, residual })
}

/// Residual of the diffraction constraint at grating-plane x (with the
/// y-consistent y), used for minimality checks.
pub fn grating_residual(scene: &Vector3<f64>, rig: &Rig, order: Order, nm: f64, point: &Vector3<f64>) -> f64 {
    let gr = &rig.grating;
    let p = rig.projector.to_device(scene);
    let pg = gr.to_grating(&p);
    let r = gr.to_grating(point);
    match diffract(&unit(r), order.value(), nm, gr.groove_density) {
        Ok(d) => (d - unit(pg - r)).norm(),
        Err(_) => f64::INFINITY,
    }
}

/// Angle between two vectors in radians.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    math::atan2(a.cross(b).norm(), a.dot(b))
}
