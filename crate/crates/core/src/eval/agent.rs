//! Scripted joystick user: holds the one axis button (of six) that points
//! most directly at its current goal, with random button flips.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::sim::sub;
use crate::data::Vec3;

/// Direction command with each axis in `{-1, 0, 1}`.
pub type Command = [i8; 3];

pub fn command_vector(c: Command) -> Vec3 {
    [c[0] as f64, c[1] as f64, c[2] as f64]
}

/// The axis button closest in angle to `d`; ties go to the lower axis.
pub fn quantize(d: Vec3) -> Command {
    let mut axis = 0;
    for i in 1..3 {
        if d[i].abs() > d[axis].abs() {
            axis = i;
        }
    }
    let mut c = [0i8; 3];
    if d[axis].abs() > 1e-9 {
        c[axis] = d[axis].signum() as i8;
    }
    c
}

#[derive(Clone, Debug)]
pub struct ScriptedAgent {
    pub flip_prob: f64,
    rng: ChaCha8Rng,
    last: Command,
    inputs: usize,
}

impl ScriptedAgent {
    pub fn new(flip_prob: f64, rng: ChaCha8Rng) -> Self {
        Self {
            flip_prob,
            rng,
            last: [0; 3],
            inputs: 0,
        }
    }

    /// Command for this tick; counts a button input whenever it changes.
    pub fn command(&mut self, p: Vec3, goal: Vec3) -> Command {
        let mut c = quantize(sub(goal, p));
        if self.rng.gen::<f64>() < self.flip_prob {
            let axis = self.rng.gen_range(0..3);
            let others: Vec<i8> = [-1i8, 0, 1].into_iter().filter(|&v| v != c[axis]).collect();
            c[axis] = others[self.rng.gen_range(0..others.len())];
        }
        if c != self.last {
            self.inputs += 1;
            self.last = c;
        }
        c
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    /// Releases all buttons without counting an input.
    pub fn release(&mut self) {
        self.last = [0; 3];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sim::stream_rng;

    #[test]
    fn quantization() {
        assert_eq!(quantize([0.1, -0.22, -0.35]), [0, 0, -1]);
        assert_eq!(quantize([0.3, 0.0, 0.0]), [1, 0, 0]);
        assert_eq!(quantize([-0.2, 0.2, 0.1]), [-1, 0, 0]);
        assert_eq!(quantize([0.0; 3]), [0, 0, 0]);
    }

    #[test]
    fn noiseless_agent_counts_changes() {
        let mut a = ScriptedAgent::new(0.0, stream_rng(0, 0));
        let g = [1.0, 0.0, 0.0];
        assert_eq!(a.command([0.0; 3], g), [1, 0, 0]);
        assert_eq!(a.command([0.1, 0.0, 0.0], g), [1, 0, 0]);
        assert_eq!(a.inputs(), 1);
        assert_eq!(a.command([0.9, 0.5, 0.0], g), [0, -1, 0]);
        assert_eq!(a.inputs(), 2);
    }

    #[test]
    fn flips_change_exactly_one_axis() {
        let mut a = ScriptedAgent::new(1.0, stream_rng(4, 0));
        for _ in 0..100 {
            let c = a.command([0.0; 3], [1.0, 0.0, 0.0]);
            let diff = (0..3).filter(|&i| c[i] != [1, 0, 0][i]).count();
            assert_eq!(diff, 1);
        }
    }
}
