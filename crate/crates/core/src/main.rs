fn main() {
    coinflip_lab::cli::main()
}
