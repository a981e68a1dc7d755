/* toy valgrind */
int valgrind_init(void) { return 0; }
