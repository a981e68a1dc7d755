/* toy toy-libc */
int toy_libc_init(void) { return 0; }
