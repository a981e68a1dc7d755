/* toy R */
int R_init(void) { return 0; }
