import bpy
import math

metal = bpy.data.materials.new(name="Chrome")
metal.diffuse_color = (0.8, 0.8, 0.85, 1.0)
metal.metallic = 1.0
fabric = bpy.data.materials.new(name="RedFabric")
fabric.diffuse_color = (0.6, 0.05, 0.05, 1.0)

bpy.ops.mesh.primitive_cylinder_add(radius=0.25, depth=0.06, location=(0, 0, 0.5))
seat = bpy.context.active_object
seat.name = "Seat"
seat.data.materials.append(fabric)

bpy.ops.mesh.primitive_cylinder_add(radius=0.03, depth=0.45, location=(0, 0, 0.25))
post = bpy.context.active_object
post.name = "Post"
post.data.materials.append(metal)

for i in range(5):
    angle = 2 * math.pi * i / 5
    bpy.ops.mesh.primitive_cube_add(size=1.0, location=(0.15 * math.cos(angle), 0.15 * math.sin(angle), 0.03))
    arm = bpy.context.active_object
    arm.name = f"Base_{i}"
    arm.scale = (0.15, 0.02, 0.015)
    arm.rotation_euler = (0, 0, angle)
    arm.data.materials.append(metal)

bpy.ops.mesh.primitive_cube_add(size=1.0, location=(0, 0.22, 0.8))
back = bpy.context.active_object
back.name = "Backrest"
back.scale = (0.22, 0.03, 0.25)
back.data.materials.append(fabric)
