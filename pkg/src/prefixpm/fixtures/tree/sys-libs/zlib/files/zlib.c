/* toy zlib */
int zlib_init(void) { return 0; }
