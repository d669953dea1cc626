import bpy

rubber = bpy.data.materials.new(name="OrangeRubber")
rubber.diffuse_color = (0.9, 0.35, 0.05, 1.0)
seam = bpy.data.materials.new(name="Seam")
seam.diffuse_color = (0.02, 0.02, 0.02, 1.0)

bpy.ops.mesh.primitive_uv_sphere_add(segments=48, ring_count=24, radius=0.12, location=(0, 0, 0.12))
ball = bpy.context.active_object
ball.name = "Ball"
ball.data.materials.append(rubber)
bpy.ops.object.shade_smooth()

for i, rotation in enumerate([(0, 0, 0), (1.5708, 0, 0)]):
    bpy.ops.mesh.primitive_torus_add(major_radius=0.121, minor_radius=0.003, location=(0, 0, 0.12),
                                     rotation=rotation)
    line = bpy.context.active_object
    line.name = f"Seam_{i}"
    line.data.materials.append(seam)
