use crate::encoders::AudioTower;
use crate::error::{Error, Result};
use crate::numerics::{copy_params, freeze, Module, Tensor};

/// `shadow ← m·shadow + (1−m)·live`, element by element.
pub fn momentum_update(shadow: &[Tensor], live: &[Tensor], momentum: f32) -> Result<()> {
    if !(0.0..=1.0).contains(&momentum) {
        return Err(Error::contract(format!("momentum {momentum} outside [0, 1]")));
    }
    if shadow.len() != live.len() {
        return Err(Error::contract(format!(
            "shadow holds {} tensors, live model {}",
            shadow.len(),
            live.len()
        )));
    }
    for (s, l) in shadow.iter().zip(live) {
        if s.shape() != l.shape() {
            return Err(Error::contract(format!(
                "shadow shape {:?} does not mirror live shape {:?}",
                s.shape(),
                l.shape()
            )));
        }
    }
    let keep = 1.0 - momentum;
    for (s, l) in shadow.iter().zip(live) {
        let live_values = l.data();
        s.update(|v| {
            for (a, b) in v.iter_mut().zip(live_values.iter()) {
                *a = momentum * *a + keep * *b;
            }
        });
    }
    Ok(())
}

/// Slowly moving copy of the audio tower that produces queue keys.
#[derive(Debug)]
pub struct MomentumEncoder {
    pub shadow: AudioTower,
    pub momentum: f32,
}

impl MomentumEncoder {
    /// Starts as an exact, gradient-free copy of `live`.
    pub fn new(live: &AudioTower, momentum: f32) -> Result<MomentumEncoder> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum must lie in [0, 1], got {momentum}")));
        }
        let shadow = AudioTower::new(live.config.clone(), 0)?;
        copy_params(&shadow, live)?;
        freeze(&shadow);
        Ok(MomentumEncoder { shadow, momentum })
    }

    pub fn update(&self, live: &AudioTower) -> Result<()> {
        momentum_update(&self.shadow.tensors(), &live.tensors(), self.momentum)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(a: f32, b: f32) -> (Tensor, Tensor) {
        (Tensor::new(vec![a; 3], &[3]).unwrap(), Tensor::new(vec![b; 3], &[3]).unwrap())
    }

    #[test]
    fn momentum_one_keeps_shadow() {
        let (s, l) = pair(0.25, 7.0);
        momentum_update(&[s.clone()], &[l], 1.0).unwrap();
        assert_eq!(s.to_vec(), vec![0.25; 3]);
    }

    #[test]
    fn momentum_zero_copies_live() {
        let (s, l) = pair(0.25, 7.0);
        momentum_update(&[s.clone()], &[l], 0.0).unwrap();
        assert_eq!(s.to_vec(), vec![7.0; 3]);
    }

    #[test]
    fn default_momentum_step() {
        let (s, l) = pair(0.0, 1.0);
        momentum_update(&[s.clone()], &[l], 0.99).unwrap();
        assert!(s.to_vec().iter().all(|v| (v - 0.01).abs() < 1e-7));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let s = Tensor::zeros(&[2]);
        let l = Tensor::zeros(&[3]);
        assert!(matches!(momentum_update(&[s], &[l], 0.5), Err(Error::Contract(_))));
    }
}
