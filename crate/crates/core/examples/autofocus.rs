//! Focus scores across a generated ten-plane stack, with the stack's
//! planes written as PGM files to a temporary directory.

use droplab::imaging::{autofocus, checkerboard, focus_measure, write_pgm, FocalStack};

fn main() {
    let sharp = checkerboard(64, 64, 4, 0.2, 0.8);
    let stack = FocalStack::synthetic(&sharp, 10, 6, 0.5).unwrap();
    let dir = std::env::temp_dir().join("droplab_autofocus");
    std::fs::create_dir_all(&dir).unwrap();
    for (i, f) in stack.frames().iter().enumerate() {
        println!("plane {i}: focus {:.6}", focus_measure(f).unwrap());
        std::fs::write(dir.join(format!("plane{i}.pgm")), write_pgm(f, 255)).unwrap();
    }
    println!("sharpest plane {} (built at 6); planes in {}", autofocus(&stack), dir.display());
}
