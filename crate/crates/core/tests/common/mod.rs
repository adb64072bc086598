use mst_core::cassi::HsiCube;
use mst_core::rng;
use mst_core::Tensor;

pub fn pair(seed: u64, h: usize, w: usize, n: usize) -> (HsiCube<f64>, HsiCube<f64>) {
    let mut r = rng::seeded(seed);
    let gt: Tensor<f64> = rng::uniform(&mut r, &[h, w, n], 0.0, 1.0);
    let noise: Tensor<f64> = rng::uniform(&mut r, &[h, w, n], -0.1, 0.1);
    let pred = gt.zip_map(&noise, |a, b| (a + b).clamp(0.0, 1.0)).unwrap();
    (HsiCube::from_tensor(pred).unwrap(), HsiCube::from_tensor(gt).unwrap())
}

fn plane(c: &HsiCube<f64>, band: usize) -> Vec<Vec<f64>> {
    (0..c.height()).map(|y| (0..c.width()).map(|x| c.get(y, x, band)).collect()).collect()
}

pub fn psnr_oracle(p: &HsiCube<f64>, g: &HsiCube<f64>) -> f64 {
    let n = p.bands();
    let mut total = 0.0;
    for b in 0..n {
        let (pp, gg) = (plane(p, b), plane(g, b));
        let mut se = 0.0;
        let mut count = 0.0;
        for (rp, rg) in pp.iter().zip(&gg) {
            for (a, c) in rp.iter().zip(rg) {
                se += (a - c) * (a - c);
                count += 1.0;
            }
        }
        total += -10.0 * (se / count).log10();
    }
    total / n as f64
}

/// Separable Gaussian filtering over valid positions, then the SSIM map.
pub fn ssim_oracle(p: &HsiCube<f64>, g: &HsiCube<f64>) -> f64 {
    let (h, w, n) = (p.height(), p.width(), p.bands());
    let k = 11.min(h).min(w);
    let centre = (k - 1) as f64 / 2.0;
    let mut g1: Vec<f64> = (0..k).map(|i| (-(i as f64 - centre).powi(2) / 4.5).exp()).collect();
    let s: f64 = g1.iter().sum();
    g1.iter_mut().for_each(|v| *v /= s);
    let filter = |img: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let rows: Vec<Vec<f64>> =
            img.iter().map(|r| (0..=w - k).map(|x| (0..k).map(|i| g1[i] * r[x + i]).sum()).collect()).collect();
        (0..=h - k).map(|y| (0..=w - k).map(|x| (0..k).map(|i| g1[i] * rows[y + i][x]).sum()).collect()).collect()
    };
    let prod = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        a.iter().zip(b).map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x * y).collect()).collect()
    };
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    for b in 0..n {
        let (x, y) = (plane(p, b), plane(g, b));
        let (mx, my) = (filter(&x), filter(&y));
        let (sxx, syy, sxy) = (filter(&prod(&x, &x)), filter(&prod(&y, &y)), filter(&prod(&x, &y)));
        let mut acc = 0.0;
        let mut cnt = 0.0;
        for i in 0..mx.len() {
            for j in 0..mx[0].len() {
                let (a, c) = (mx[i][j], my[i][j]);
                let num = (2.0 * a * c + c1) * (2.0 * (sxy[i][j] - a * c) + c2);
                let den = (a * a + c * c + c1) * (sxx[i][j] - a * a + syy[i][j] - c * c + c2);
                acc += num / den;
                cnt += 1.0;
            }
        }
        total += acc / cnt;
    }
    total / n as f64
}
