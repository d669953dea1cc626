import bpy
import random

random.seed(7)
bark = bpy.data.materials.new(name="Bark")
bark.diffuse_color = (0.28, 0.18, 0.1, 1.0)
leaves = bpy.data.materials.new(name="Leaves")
leaves.diffuse_color = (0.12, 0.45, 0.12, 1.0)

bpy.ops.mesh.primitive_cylinder_add(radius=0.18, depth=3.0, location=(0, 0, 1.5))
trunk = bpy.context.active_object
trunk.name = "Trunk"
trunk.data.materials.append(bark)

for i in range(6):
    offset = (random.uniform(-0.6, 0.6), random.uniform(-0.6, 0.6), random.uniform(0.0, 0.8))
    bpy.ops.mesh.primitive_ico_sphere_add(subdivisions=2, radius=random.uniform(0.8, 1.2),
                                          location=(offset[0], offset[1], 3.2 + offset[2]))
    crown = bpy.context.active_object
    crown.name = f"Crown_{i}"
    crown.data.materials.append(leaves)
