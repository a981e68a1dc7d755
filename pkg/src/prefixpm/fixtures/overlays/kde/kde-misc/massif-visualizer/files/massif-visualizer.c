/* toy massif-visualizer */
int massif_visualizer_init(void) { return 0; }
