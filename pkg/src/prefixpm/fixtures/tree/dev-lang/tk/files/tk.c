/* toy tk */
int tk_init(void) { return 0; }
