fn main() {
    // Filled in once the core pipeline lands.
}
