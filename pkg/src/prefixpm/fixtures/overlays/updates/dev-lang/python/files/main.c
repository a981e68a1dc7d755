/* toy python interpreter */
#define PREFIX_AWARE 0
int main(void) { return 0; }
