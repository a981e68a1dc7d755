/* toy libffi */
#error-on *-k1om-* libffi: closures.c has no k1om support
void ffi_call(void) {}
