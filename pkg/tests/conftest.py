from rehabseg import _compute

# big-buffer recycling makes the training-heavy tests ~4x faster
_compute.enable_heap_reuse()
