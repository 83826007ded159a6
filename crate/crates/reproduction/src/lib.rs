//! Holds the `acceptance` test target, which runs the MNIST accuracy and
//! hardware-equivalence checks and prints one line per criterion.
