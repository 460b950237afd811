from __future__ import annotations

from dissect.cstruct import cstruct

# Projector parameter file: a fixed header followed by tensor_count tensor records.
# Vectors are stored as 1 x n matrices. All values are IEEE-754 doubles.
transvq_def = """
struct param_header {
    char    magic[4];
    uint16  version;
    uint16  tensor_count;
    uint32  d;
    uint32  d_model;
    uint32  ratio;
};

struct param_tensor {
    char    name[16];
    uint32  rows;
    uint32  cols;
    uint32  count;
    double  values[count];
};
"""

c_transvq = cstruct(endian="<").load(transvq_def)
