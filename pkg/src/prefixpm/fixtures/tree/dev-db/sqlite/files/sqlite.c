/* toy sqlite */
int sqlite_init(void) { return 0; }
